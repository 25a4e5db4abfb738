//! Mini-batch SGD for the identification and Siamese objectives.

use serde::Serialize;

use super::loss::{si_loss, siamese_loss, siamese_prob, LabeledRef, PairRef};
use super::{ClassifierHead, EmbeddingModel, FreezeSet, ParamGroup, Parameters, SiameseHead};
use crate::error::{Error, Result};
use crate::eval::eer_from_labeled_scores;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InitMode {
    /// Base, trunk and head drawn fresh from the run seed.
    FromScratch,
    /// Base and trunk kept, head drawn fresh.
    FineTune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init: InitMode,
    pub freeze: FreezeSet,
    pub seed: u64,
}

impl TrainConfig {
    /// Learning rate 0.001 for 40 epochs, batch 32. Fine-tuning freezes the
    /// base.
    pub fn si_default(init: InitMode, seed: u64) -> Self {
        let freeze = match init {
            InitMode::FromScratch => FreezeSet::new(),
            InitMode::FineTune => [ParamGroup::Base].into_iter().collect(),
        };
        TrainConfig {
            learning_rate: 0.001,
            epochs: 40,
            batch_size: 32,
            init,
            freeze,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub learning_rate: f64,
    pub train_loss: f64,
    /// Error on the validation set after this epoch, if one was given.
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SiOutcome {
    pub model: EmbeddingModel,
    pub head: ClassifierHead,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl SiOutcome {
    pub fn best_val_error(&self) -> Option<f64> {
        self.history[self.best_epoch].val_error
    }
}

/// `1 - top-1 accuracy` of `head` over `examples`.
pub fn classification_error(
    model: &EmbeddingModel,
    head: &ClassifierHead,
    examples: &[LabeledRef<'_>],
) -> Option<f64> {
    if examples.is_empty() {
        return None;
    }
    let wrong = examples
        .iter()
        .filter(|ex| head.predict(&model.forward(ex.features).embedding) != ex.label)
        .count();
    Some(wrong as f64 / examples.len() as f64)
}

fn step_unfrozen(model: &mut EmbeddingModel, grads: &EmbeddingModel, freeze: &FreezeSet, lr: f64) {
    if !freeze.contains(&ParamGroup::Base) {
        model.base.sgd_step(&grads.base, lr);
    }
    if !freeze.contains(&ParamGroup::Trunk) {
        model.trunk.sgd_step(&grads.trunk, lr);
    }
}

fn check_examples(model: &EmbeddingModel, xs: impl Iterator<Item = usize>) -> Result<()> {
    for len in xs {
        if len != model.feature_dim() {
            return Err(Error::DimMismatch {
                expected: model.feature_dim(),
                got: len,
            });
        }
    }
    Ok(())
}

/// Trains an identification head over `n_classes` labels (and, unless
/// frozen, the embedding layers) and returns the parameters of the epoch
/// with the lowest validation error; the earliest such epoch wins ties.
/// Without a validation set the last epoch is returned.
pub fn train_si(
    model: &EmbeddingModel,
    n_classes: usize,
    train: &[LabeledRef<'_>],
    val: &[LabeledRef<'_>],
    cfg: &TrainConfig,
) -> Result<SiOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_examples(model, train.iter().chain(val).map(|e| e.features.len()))?;
    if let Some(bad) = train.iter().chain(val).find(|e| e.label >= n_classes) {
        return Err(Error::invalid(format!(
            "label {} outside [0, {n_classes})",
            bad.label
        )));
    }
    let root = Rng::new(cfg.seed);
    let mut init_rng = root.derive(0);
    let mut model = match cfg.init {
        InitMode::FromScratch => EmbeddingModel::random(
            model.feature_dim(),
            model.hidden_dim(),
            model.embedding_dim(),
            &mut init_rng,
        ),
        InitMode::FineTune => model.clone(),
    };
    let mut head = ClassifierHead::random(model.embedding_dim(), n_classes, &mut init_rng)?;
    let head_frozen = cfg.freeze.contains(&ParamGroup::Head);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EmbeddingModel, ClassifierHead)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = root.derive(1 + epoch as u64);
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let (loss, grads) = si_loss(&model, &head, &batch, &cfg.freeze)?;
            loss_sum += loss;
            n_batches += 1;
            step_unfrozen(&mut model, &grads.model, &cfg.freeze, cfg.learning_rate);
            if !head_frozen {
                head.sgd_step(&grads.head, cfg.learning_rate);
            }
        }
        let val_error = classification_error(&model, &head, val);
        history.push(EpochRecord {
            epoch,
            phase: 1,
            learning_rate: cfg.learning_rate,
            train_loss: loss_sum / n_batches as f64,
            val_error,
        });
        let better = match (&best, val_error) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some((b, ..)), Some(e)) => e < *b,
        };
        if better {
            best = Some((
                val_error.unwrap_or(f64::INFINITY),
                epoch,
                model.clone(),
                head.clone(),
            ));
        }
    }
    let (_, best_epoch, model, head) = best.expect("at least one epoch");
    Ok(SiOutcome {
        model,
        head,
        history,
        best_epoch,
    })
}

/// Two-phase Siamese fine-tuning schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseConfig {
    /// Phase 1: embedding layers frozen, head only.
    pub phase1_lr: f64,
    /// Phase 2: every parameter trained.
    pub phase2_lr: f64,
    pub epochs: usize,
    pub phase1_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl SiameseConfig {
    /// 20 epochs split 10 + 10, learning rates 0.01 then 0.001.
    pub fn reference_default(seed: u64) -> Self {
        SiameseConfig {
            phase1_lr: 0.01,
            phase2_lr: 0.001,
            epochs: 20,
            phase1_epochs: 10,
            batch_size: 32,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SiameseOutcome {
    pub model: EmbeddingModel,
    pub head: SiameseHead,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains the shared-weight Siamese network on labeled pairs. The returned
/// parameters are from the epoch with the lowest validation EER (earliest
/// on ties), or the last epoch when no usable validation set is given.
pub fn train_siamese(
    model: &EmbeddingModel,
    train: &[PairRef<'_>],
    val: &[PairRef<'_>],
    cfg: &SiameseConfig,
) -> Result<SiameseOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.phase1_epochs > cfg.epochs {
        return Err(Error::invalid(
            "invalid Siamese epoch or batch configuration",
        ));
    }
    for lr in [cfg.phase1_lr, cfg.phase2_lr] {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::invalid("learning rates must be finite and >= 0"));
        }
    }
    check_examples(
        model,
        train.iter().chain(val).flat_map(|p| [p.a.len(), p.b.len()]),
    )?;
    let root = Rng::new(cfg.seed);
    let mut model = model.clone();
    let mut head = SiameseHead::random(model.embedding_dim(), &mut root.derive(0));
    let phase1_freeze: FreezeSet = [ParamGroup::Base, ParamGroup::Trunk].into_iter().collect();
    let phase2_freeze = FreezeSet::new();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EmbeddingModel, SiameseHead)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let (phase, lr, freeze) = if epoch < cfg.phase1_epochs {
            (1, cfg.phase1_lr, &phase1_freeze)
        } else {
            (2, cfg.phase2_lr, &phase2_freeze)
        };
        root.derive(1 + epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let (loss, grads) = siamese_loss(&model, &head, &batch, freeze)?;
            loss_sum += loss;
            n_batches += 1;
            step_unfrozen(&mut model, &grads.model, freeze, lr);
            head.sgd_step(&grads.head, lr);
        }
        let val_error = siamese_val_eer(&model, &head, val)?;
        history.push(EpochRecord {
            epoch,
            phase,
            learning_rate: lr,
            train_loss: loss_sum / n_batches as f64,
            val_error,
        });
        let better = match (&best, val_error) {
            (None, _) | (Some(_), None) => true,
            (Some((b, ..)), Some(e)) => e < *b,
        };
        if better {
            best = Some((
                val_error.unwrap_or(f64::INFINITY),
                epoch,
                model.clone(),
                head.clone(),
            ));
        }
    }
    let (_, best_epoch, model, head) = best.expect("at least one epoch");
    Ok(SiameseOutcome {
        model,
        head,
        history,
        best_epoch,
    })
}

fn siamese_val_eer(
    model: &EmbeddingModel,
    head: &SiameseHead,
    val: &[PairRef<'_>],
) -> Result<Option<f64>> {
    let has_both = val.iter().any(|p| p.target) && val.iter().any(|p| !p.target);
    if !has_both {
        return Ok(None);
    }
    let scored = val
        .iter()
        .map(|p| {
            let a = model.forward(p.a).embedding;
            let b = model.forward(p.b).embedding;
            siamese_prob(head, &a, &b).map(|s| (s, p.target))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(eer_from_labeled_scores(&scored)?.eer))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two speakers far apart in feature space, ten segments each.
    fn two_speakers(rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
        let centers = [
            (0..6).map(|_| rng.gaussian(0.0, 1.0)).collect::<Vec<_>>(),
            (0..6).map(|_| rng.gaussian(0.0, 1.0)).collect::<Vec<_>>(),
        ];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..10 {
                xs.push(c.iter().map(|v| 3.0 * v + rng.gaussian(0.0, 0.1)).collect());
                ys.push(label);
            }
        }
        (xs, ys)
    }

    fn refs<'a>(xs: &'a [Vec<f64>], ys: &[usize]) -> Vec<LabeledRef<'a>> {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| LabeledRef {
                features: x,
                label: y,
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut rng = Rng::new(5);
        let (xs, ys) = two_speakers(&mut rng);
        let data = refs(&xs, &ys);
        let model = EmbeddingModel::random(6, 8, 4, &mut rng);
        let mut cfg = TrainConfig::si_default(InitMode::FineTune, 3);
        cfg.freeze.clear();
        cfg.learning_rate = 0.0;
        cfg.epochs = 3;
        let out = train_si(&model, 2, &data, &data, &cfg).unwrap();
        assert_eq!(out.model, model);
        let fresh = ClassifierHead::random(4, 2, &mut Rng::new(3).derive(0)).unwrap();
        assert_eq!(out.head, fresh);
        let errs: Vec<_> = out.history.iter().map(|h| h.val_error).collect();
        assert!(errs.windows(2).all(|w| w[0] == w[1]));
        let losses: Vec<_> = out.history.iter().map(|h| h.train_loss).collect();
        assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn separable_speakers_reach_zero_error() {
        let mut rng = Rng::new(8);
        let (xs, ys) = two_speakers(&mut rng);
        let data = refs(&xs, &ys);
        let model = EmbeddingModel::random(6, 8, 4, &mut rng);
        let mut cfg = TrainConfig::si_default(InitMode::FromScratch, 1);
        // plain SGD needs a larger step than the 0.001 default to converge
        // within 40 epochs
        cfg.learning_rate = 0.1;
        cfg.batch_size = 4;
        let out = train_si(&model, 2, &data, &data, &cfg).unwrap();
        assert_eq!(out.history.len(), 40);
        assert_eq!(out.best_val_error(), Some(0.0));
    }

    #[test]
    fn fine_tune_keeps_frozen_base_bits() {
        let mut rng = Rng::new(2);
        let (xs, ys) = two_speakers(&mut rng);
        let data = refs(&xs, &ys);
        let model = EmbeddingModel::random(6, 8, 4, &mut rng);
        let mut cfg = TrainConfig::si_default(InitMode::FineTune, 4);
        cfg.learning_rate = 0.1;
        let out = train_si(&model, 2, &data, &data[..4], &cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out.model.base.w), bits(&model.base.w));
        assert_eq!(bits(&out.model.base.b), bits(&model.base.b));
        assert_ne!(out.model.trunk, model.trunk);
    }

    #[test]
    fn best_epoch_has_minimum_validation_error() {
        let mut rng = Rng::new(12);
        let (xs, ys) = two_speakers(&mut rng);
        let data = refs(&xs, &ys);
        let model = EmbeddingModel::random(6, 8, 4, &mut rng);
        let mut cfg = TrainConfig::si_default(InitMode::FromScratch, 9);
        cfg.learning_rate = 0.02;
        cfg.epochs = 15;
        let out = train_si(&model, 2, &data[2..], &data[..3], &cfg).unwrap();
        let min = out
            .history
            .iter()
            .filter_map(|h| h.val_error)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_error(), Some(min));
        assert_eq!(
            classification_error(&out.model, &out.head, &data[..3]),
            Some(min)
        );
    }

    #[test]
    fn training_errors() {
        let model = EmbeddingModel::zeros(2, 2, 2);
        let cfg = TrainConfig::si_default(InitMode::FromScratch, 0);
        assert!(train_si(&model, 2, &[], &[], &cfg).is_err());
        let x = [0.0, 0.0];
        let bad = [LabeledRef {
            features: &x,
            label: 5,
        }];
        assert!(train_si(&model, 2, &bad, &[], &cfg).is_err());
        assert!(train_siamese(&model, &[], &[], &SiameseConfig::reference_default(0)).is_err());
    }

    fn pair_data(rng: &mut Rng) -> Vec<(Vec<f64>, Vec<f64>, bool)> {
        (0..24)
            .map(|i| {
                let a: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
                let b: Vec<f64> = if i % 2 == 0 {
                    a.iter().map(|v| v + rng.gaussian(0.0, 0.1)).collect()
                } else {
                    (0..5).map(|_| rng.normal()).collect()
                };
                (a, b, i % 2 == 0)
            })
            .collect()
    }

    #[test]
    fn siamese_phase_one_leaves_embedding_layers() {
        let mut rng = Rng::new(21);
        let data = pair_data(&mut rng);
        let pairs: Vec<PairRef> = data
            .iter()
            .map(|(a, b, t)| PairRef { a, b, target: *t })
            .collect();
        let model = EmbeddingModel::random(5, 6, 4, &mut rng);
        let mut cfg = SiameseConfig::reference_default(2);
        cfg.epochs = 5;
        cfg.phase1_epochs = 5;
        let out = train_siamese(&model, &pairs, &pairs, &cfg).unwrap();
        assert_eq!(out.model, model);
        assert!(out
            .history
            .iter()
            .all(|h| h.phase == 1 && h.learning_rate == 0.01));

        let cfg = SiameseConfig {
            epochs: 4,
            phase1_epochs: 2,
            ..SiameseConfig::reference_default(2)
        };
        let out = train_siamese(&model, &pairs, &pairs, &cfg).unwrap();
        let phases: Vec<u8> = out.history.iter().map(|h| h.phase).collect();
        assert_eq!(phases, vec![1, 1, 2, 2]);
        assert_eq!(out.history[3].learning_rate, 0.001);
    }

    #[test]
    fn all_target_phase_one_loss_decreases() {
        let mut rng = Rng::new(31);
        let data = pair_data(&mut rng);
        let pairs: Vec<PairRef> = data
            .iter()
            .map(|(a, b, _)| PairRef { a, b, target: true })
            .collect();
        let model = EmbeddingModel::random(5, 6, 4, &mut rng);
        let cfg = SiameseConfig {
            phase1_lr: 0.05,
            phase2_lr: 0.0,
            epochs: 30,
            phase1_epochs: 30,
            batch_size: pairs.len(),
            seed: 1,
        };
        let out = train_siamese(&model, &pairs, &[], &cfg).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn twin_branches_share_parameters() {
        let mut rng = Rng::new(4);
        let model = EmbeddingModel::random(5, 6, 4, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let pair = [PairRef {
            a: &x,
            b: &x,
            target: true,
        }];
        let (_, g) = siamese_loss(
            &model,
            &SiameseHead::random(4, &mut rng),
            &pair,
            &FreezeSet::new(),
        )
        .unwrap();
        // identical inputs give identical branch embeddings, so the head
        // gradient is dz * e^2 in every coordinate
        let e = model.embed(&x).unwrap();
        let ratio: Vec<f64> = g
            .head
            .w
            .iter()
            .zip(e.as_slice())
            .map(|(gw, ev)| gw / (ev * ev))
            .collect();
        assert!(ratio.iter().all(|r| (r - g.head.b).abs() < 1e-12));
    }
}
