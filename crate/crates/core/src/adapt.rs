//! Iterative cluster-and-learn adaptation of a pretrained checkpoint to
//! unlabeled target segments.
//!
//! Each iteration embeds every target segment with the current model,
//! clusters the embeddings into `k` pseudo-speakers, holds out one segment
//! per pseudo-speaker as a hypothesized validation set, and fine-tunes the
//! model on the rest with cluster ids as labels. The loop stops as soon as
//! the validation error fails to improve.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::cluster::{cluster, purity, ClusterAssignment, ClusterConfig};
use crate::data::SegmentRecord;
use crate::embedding::{mean_embedding, Embedding};
use crate::error::{Error, Result};
use crate::model::{
    classification_error, train_si, Checkpoint, ClassifierHead, EmbeddingModel, InitMode,
    LabeledRef, ParamGroup, TrainConfig,
};
use crate::rng::Rng;
use crate::textio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Technique {
    /// Every segment is its own clustering item.
    I,
    /// Segment embeddings are averaged per recording before clustering.
    II,
}

impl std::str::FromStr for Technique {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Technique::I),
            "II" | "2" => Ok(Technique::II),
            _ => Err(Error::invalid(format!("unknown technique `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub technique: Technique,
    /// Number of pseudo-speakers, assumed known.
    pub k: usize,
    pub clustering: ClusterConfig,
    pub max_iterations: usize,
    /// Fine-tuning settings for each iteration; `init` is forced to
    /// `FineTune`.
    pub train_cfg: TrainConfig,
    pub seed: u64,
    /// When set, every iteration's model is written here.
    pub checkpoint_dir: Option<PathBuf>,
}

impl AdaptConfig {
    pub fn new(
        technique: Technique,
        clustering: ClusterConfig,
        train_cfg: TrainConfig,
        seed: u64,
    ) -> Self {
        AdaptConfig {
            technique,
            k: clustering.k,
            clustering,
            max_iterations: 5,
            train_cfg,
            seed,
            checkpoint_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("k must be >= 2, got {}", self.k)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Clustering items and, for each item, the segments it stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterInputs {
    pub items: Vec<Embedding>,
    pub members: Vec<Vec<usize>>,
}

pub fn build_cluster_inputs(
    model: &EmbeddingModel,
    segments: &[SegmentRecord],
    technique: Technique,
) -> Result<ClusterInputs> {
    if segments.is_empty() {
        return Err(Error::Empty("target segments"));
    }
    let embeddings: Vec<Embedding> = segments
        .iter()
        .map(|s| model.embed(&s.features))
        .collect::<Result<_>>()?;
    match technique {
        Technique::I => Ok(ClusterInputs {
            members: (0..segments.len()).map(|i| vec![i]).collect(),
            items: embeddings,
        }),
        Technique::II => {
            let mut order: Vec<&str> = Vec::new();
            let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, s) in segments.iter().enumerate() {
                if s.recording_id.is_empty() {
                    return Err(Error::invalid(format!(
                        "segment `{}` has no recording id",
                        s.segment_id
                    )));
                }
                groups
                    .entry(&s.recording_id)
                    .or_insert_with(|| {
                        order.push(&s.recording_id);
                        Vec::new()
                    })
                    .push(i);
            }
            let mut items = Vec::with_capacity(order.len());
            let mut members = Vec::with_capacity(order.len());
            for rec in order {
                let idx = groups.remove(rec).expect("grouped above");
                let embs: Vec<&Embedding> = idx.iter().map(|&i| &embeddings[i]).collect();
                items.push(mean_embedding(
                    &embs.iter().map(|e| e.as_slice()).collect::<Vec<_>>(),
                )?);
                members.push(idx);
            }
            Ok(ClusterInputs { items, members })
        }
    }
}

/// Broadcasts each item's cluster id to the segments it stands for.
pub fn assign_pseudo_labels(
    assignment: &ClusterAssignment,
    inputs: &ClusterInputs,
    n_segments: usize,
) -> Result<Vec<usize>> {
    if assignment.n_items() != inputs.members.len() {
        return Err(Error::invalid(format!(
            "assignment covers {} items, inputs have {}",
            assignment.n_items(),
            inputs.members.len()
        )));
    }
    let mut labels = vec![usize::MAX; n_segments];
    for (item, segs) in inputs.members.iter().enumerate() {
        for &s in segs {
            *labels.get_mut(s).ok_or_else(|| {
                Error::invalid(format!("item {item} maps to unknown segment {s}"))
            })? = assignment.labels[item];
        }
    }
    if let Some(s) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(Error::invalid(format!(
            "segment {s} received no pseudo-label"
        )));
    }
    Ok(labels)
}

/// Segment indices of a hypothesized train/validation split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HypothesizedSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Pseudo-labels with a single segment, hence no validation sample.
    pub uncovered: Vec<usize>,
}

/// One randomly chosen segment per pseudo-label goes to validation;
/// single-segment labels stay in train and are reported as uncovered.
pub fn split_hypothesized_validation(
    labels: &[usize],
    k: usize,
    rng: &mut Rng,
) -> HypothesizedSplit {
    let mut by_label = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_label[l].push(i);
    }
    let mut split = HypothesizedSplit::default();
    let mut held = vec![false; labels.len()];
    for (label, segs) in by_label.iter().enumerate() {
        match segs.len() {
            0 => {}
            1 => split.uncovered.push(label),
            n => {
                let pick = segs[rng.index(n)];
                held[pick] = true;
                split.validation.push(pick);
            }
        }
    }
    split.train = (0..labels.len()).filter(|&i| !held[i]).collect();
    split
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    ErrorRose,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub validation_error: f64,
    /// Purity of the pseudo-labels this iteration was evaluated on, when
    /// every target segment carries a ground-truth speaker.
    pub purity: Option<f64>,
    pub checkpoint: Option<String>,
    pub uncovered_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptReport {
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub stop_reason: Option<StopReason>,
}

impl AdaptReport {
    /// One JSON object per line; the last line carries the stop reason.
    pub fn to_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            stop_reason: Option<StopReason>,
            best_iteration: usize,
        }
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain struct"));
            out.push('\n');
        }
        let summary = Summary {
            stop_reason: self.stop_reason,
            best_iteration: self.best_iteration,
        };
        out.push_str(&serde_json::to_string(&summary).expect("plain struct"));
        out.push('\n');
        out
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.validation_error).collect()
    }
}

/// How the loop scores a model on the hypothesized validation set.
pub trait ValidationMetric {
    fn validation_error(
        &mut self,
        iteration: usize,
        model: &EmbeddingModel,
        head: &ClassifierHead,
        validation: &[LabeledRef<'_>],
    ) -> Result<f64>;
}

/// `1 - top-1 accuracy` of the identification head.
#[derive(Debug, Clone, Copy, Default)]
pub struct Top1Error;

impl ValidationMetric for Top1Error {
    fn validation_error(
        &mut self,
        _iteration: usize,
        model: &EmbeddingModel,
        head: &ClassifierHead,
        validation: &[LabeledRef<'_>],
    ) -> Result<f64> {
        classification_error(model, head, validation).ok_or(Error::Infeasible(
            "hypothesized validation set is empty".into(),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub report: AdaptReport,
    /// The model with the lowest recorded error.
    pub model: EmbeddingModel,
    pub head: ClassifierHead,
    /// Every iteration's model, indexed like `report.records`.
    pub iterates: Vec<(EmbeddingModel, ClassifierHead)>,
}

/// Failure inside the loop, with every iteration completed so far.
#[derive(Debug)]
pub struct AdaptError {
    pub error: Error,
    pub partial: AdaptReport,
}

impl fmt::Display for AdaptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "adaptation aborted after {} records: {}",
            self.partial.records.len(),
            self.error
        )
    }
}

impl std::error::Error for AdaptError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct PseudoLabels {
    labels: Vec<usize>,
    split: HypothesizedSplit,
    purity: Option<f64>,
}

fn pseudo_label(
    model: &EmbeddingModel,
    segments: &[SegmentRecord],
    cfg: &AdaptConfig,
    iteration: usize,
) -> Result<PseudoLabels> {
    let inputs = build_cluster_inputs(model, segments, cfg.technique)?;
    let mut ccfg = cfg.clustering.clone();
    ccfg.k = cfg.k;
    ccfg.seed = Rng::new(cfg.seed)
        .derive(1000 + iteration as u64)
        .next_u64();
    let assignment = cluster(&inputs.items, &ccfg)?;
    let labels = assign_pseudo_labels(&assignment, &inputs, segments.len())?;
    let split = split_hypothesized_validation(
        &labels,
        cfg.k,
        &mut Rng::new(cfg.seed).derive(2000 + iteration as u64),
    );
    let truth: Option<Vec<&str>> = segments.iter().map(|s| s.speaker_id.as_deref()).collect();
    let purity = match truth {
        Some(t) => {
            let seg_assignment = ClusterAssignment {
                labels: labels.clone(),
                k: cfg.k,
                inertia: None,
            };
            Some(purity(&seg_assignment, &t)?)
        }
        None => None,
    };
    Ok(PseudoLabels {
        labels,
        split,
        purity,
    })
}

fn examples<'a>(
    segments: &'a [SegmentRecord],
    labels: &[usize],
    idx: &[usize],
) -> Vec<LabeledRef<'a>> {
    idx.iter()
        .map(|&i| LabeledRef {
            features: &segments[i].features,
            label: labels[i],
        })
        .collect()
}

/// Runs the loop with the default top-1 validation metric.
pub fn run_adapt_loop(
    pretrained: &EmbeddingModel,
    target: &[SegmentRecord],
    cfg: &AdaptConfig,
) -> std::result::Result<AdaptOutcome, AdaptError> {
    run_adapt_loop_with(pretrained, target, cfg, &mut Top1Error)
}

/// Iteration 0 scores the pretrained model: its own embeddings are
/// clustered and split, and a fresh head is fitted with the embedding
/// layers frozen. Iteration `i >= 1` fine-tunes the previous model on the
/// pseudo-labels produced from it. The loop stops once `E_i >= E_{i-1}` or
/// after `max_iterations` fine-tuning passes, and returns the model with
/// the lowest error (earliest on ties).
pub fn run_adapt_loop_with(
    pretrained: &EmbeddingModel,
    target: &[SegmentRecord],
    cfg: &AdaptConfig,
    metric: &mut dyn ValidationMetric,
) -> std::result::Result<AdaptOutcome, AdaptError> {
    let mut report = AdaptReport::default();
    let mut iterates = Vec::new();
    let result = adapt_inner(pretrained, target, cfg, metric, &mut report, &mut iterates);
    match result {
        Ok(()) => {
            let (model, head) = iterates[report.best_iteration].clone();
            Ok(AdaptOutcome {
                report,
                model,
                head,
                iterates,
            })
        }
        Err(error) => Err(AdaptError {
            error,
            partial: report,
        }),
    }
}

fn adapt_inner(
    pretrained: &EmbeddingModel,
    target: &[SegmentRecord],
    cfg: &AdaptConfig,
    metric: &mut dyn ValidationMetric,
    report: &mut AdaptReport,
    iterates: &mut Vec<(EmbeddingModel, ClassifierHead)>,
) -> Result<()> {
    cfg.validate()?;
    let mut tcfg = cfg.train_cfg.clone();
    tcfg.init = InitMode::FineTune;

    let mut record = |iteration: usize,
                      error: f64,
                      purity: Option<f64>,
                      uncovered: usize,
                      model: &EmbeddingModel,
                      head: &ClassifierHead,
                      report: &mut AdaptReport|
     -> Result<()> {
        let checkpoint = match &cfg.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(format!("adapt_iter{iteration}.ckpt"));
                let ckpt = Checkpoint {
                    model: model.clone(),
                    classifier: Some(head.clone()),
                    siamese: None,
                };
                textio::write_string(&path, &ckpt.to_text())?;
                Some(path.display().to_string())
            }
            None => None,
        };
        report.records.push(IterationRecord {
            iteration,
            validation_error: error,
            purity,
            checkpoint,
            uncovered_labels: uncovered,
        });
        if report
            .records
            .iter()
            .all(|r| r.iteration == iteration || error < r.validation_error)
        {
            report.best_iteration = iteration;
        }
        iterates.push((model.clone(), head.clone()));
        Ok(())
    };

    // iteration 0: the pretrained model against its own clustering
    let mut pseudo = pseudo_label(pretrained, target, cfg, 0)?;
    let mut probe_cfg = tcfg.clone();
    probe_cfg.freeze = [ParamGroup::Base, ParamGroup::Trunk].into_iter().collect();
    probe_cfg.seed = Rng::new(cfg.seed).derive(3000).next_u64();
    let train = examples(target, &pseudo.labels, &pseudo.split.train);
    let val = examples(target, &pseudo.labels, &pseudo.split.validation);
    let probe = train_si(pretrained, cfg.k, &train, &val, &probe_cfg)?;
    let e0 = metric.validation_error(0, &probe.model, &probe.head, &val)?;
    record(
        0,
        e0,
        pseudo.purity,
        pseudo.split.uncovered.len(),
        &probe.model,
        &probe.head,
        report,
    )?;

    let mut current = pretrained.clone();
    let mut prev_error = e0;
    for iteration in 1..=cfg.max_iterations {
        let train = examples(target, &pseudo.labels, &pseudo.split.train);
        let val = examples(target, &pseudo.labels, &pseudo.split.validation);
        let mut it_cfg = tcfg.clone();
        it_cfg.seed = Rng::new(cfg.seed)
            .derive(3000 + iteration as u64)
            .next_u64();
        let trained = train_si(&current, cfg.k, &train, &val, &it_cfg)?;
        let error = metric.validation_error(iteration, &trained.model, &trained.head, &val)?;
        record(
            iteration,
            error,
            pseudo.purity,
            pseudo.split.uncovered.len(),
            &trained.model,
            &trained.head,
            report,
        )?;
        if error >= prev_error {
            report.stop_reason = Some(StopReason::ErrorRose);
            return Ok(());
        }
        if iteration == cfg.max_iterations {
            break;
        }
        prev_error = error;
        current = trained.model;
        pseudo = pseudo_label(&current, target, cfg, iteration)?;
    }
    report.stop_reason = Some(StopReason::MaxIterations);
    Ok(())
}
