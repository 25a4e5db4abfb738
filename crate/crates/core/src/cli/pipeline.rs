//! Stage helpers shared by the command-line driver and experiment code.

use std::collections::BTreeMap;

use crate::adapt::{split_hypothesized_validation, HypothesizedSplit};
use crate::data::{PreparedDataset, TrialPair};
use crate::error::{Error, Result};
use crate::eval::{compute_eer, score_trials, Backend, EerResult, ScoredTrial};
use crate::model::{
    train_si, EmbeddingModel, LabeledRef, PairRef, SiOutcome, SiameseHead, TrainConfig,
};
use crate::rng::Rng;

/// Class index per segment, with speakers numbered in ascending ID order.
/// Fails on segments without a speaker.
pub fn speaker_labels(dataset: &PreparedDataset) -> Result<(Vec<usize>, Vec<String>)> {
    let speakers: Vec<String> = dataset.speakers().into_iter().map(String::from).collect();
    let index: BTreeMap<&str, usize> = speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let labels = dataset
        .segments
        .iter()
        .map(|s| match &s.speaker_id {
            Some(spk) => Ok(index[spk.as_str()]),
            None => Err(Error::invalid(format!(
                "segment `{}` has no speaker",
                s.segment_id
            ))),
        })
        .collect::<Result<_>>()?;
    Ok((labels, speakers))
}

/// Holds one random segment per speaker out for validation.
pub fn holdout_split(labels: &[usize], n_classes: usize, rng: &mut Rng) -> HypothesizedSplit {
    split_hypothesized_validation(labels, n_classes, rng)
}

/// Supervised identification training on a labeled dataset, validated on
/// one held-out segment per speaker.
pub fn train_supervised(
    model: &EmbeddingModel,
    dataset: &PreparedDataset,
    cfg: &TrainConfig,
) -> Result<SiOutcome> {
    let (labels, speakers) = speaker_labels(dataset)?;
    if speakers.len() < 2 {
        return Err(Error::Infeasible(format!(
            "identification training needs at least 2 speakers, found {}",
            speakers.len()
        )));
    }
    let split = holdout_split(&labels, speakers.len(), &mut Rng::new(cfg.seed).derive(77));
    let pick = |idx: &[usize]| -> Vec<LabeledRef<'_>> {
        idx.iter()
            .map(|&i| LabeledRef {
                features: &dataset.segments[i].features,
                label: labels[i],
            })
            .collect()
    };
    train_si(
        model,
        speakers.len(),
        &pick(&split.train),
        &pick(&split.validation),
        cfg,
    )
}

/// Resolves trial pairs against a dataset for Siamese training.
pub fn pair_refs<'a>(
    dataset: &'a PreparedDataset,
    pairs: &[TrialPair],
) -> Result<Vec<PairRef<'a>>> {
    let index = dataset.index();
    pairs
        .iter()
        .map(|p| {
            Ok(PairRef {
                a: &index.get(&p.seg_a)?.features,
                b: &index.get(&p.seg_b)?.features,
                target: p.target,
            })
        })
        .collect()
}

/// Scores a trial list and computes its EER.
pub fn verification_eer(
    model: &EmbeddingModel,
    head: Option<&SiameseHead>,
    dataset: &PreparedDataset,
    pairs: &[TrialPair],
    backend: Backend,
) -> Result<(Vec<ScoredTrial>, EerResult)> {
    let scored = score_trials(model, head, &dataset.index(), pairs, backend)?;
    let eer = compute_eer(&scored)?;
    Ok((scored, eer))
}
