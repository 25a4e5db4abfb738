//! Small differentiable embedding network: a frozen-able affine+tanh base,
//! a trainable affine+tanh trunk whose output is the embedding, a softmax
//! speaker-identification head and a Siamese verification head.

mod checkpoint;
mod gradcheck;
mod loss;
mod train;

pub use checkpoint::Checkpoint;
pub use gradcheck::{compare_gradients, gradient_check_si, gradient_check_siamese};
pub use loss::{
    si_loss, siamese_forward, siamese_loss, softmax, LabeledRef, PairRef, SiGrads, SiameseGrads,
};
pub use train::{
    classification_error, train_si, train_siamese, EpochRecord, InitMode, SiOutcome, SiameseConfig,
    SiameseOutcome, TrainConfig,
};

use std::collections::BTreeSet;

use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Default raw feature dimension.
pub const DEFAULT_FEATURE_DIM: usize = 32;
pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_EMBEDDING_DIM: usize = 16;

/// Affine map `y = W x + b`, `W` stored row-major `(outputs x inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        for v in d.w.iter_mut().chain(d.b.iter_mut()) {
            *v = rng.uniform_range(-bound, bound);
        }
        d
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.w
            .chunks_exact(self.inputs)
            .zip(&self.b)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    /// `W^T g`
    pub(crate) fn back(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (row, gi) in self.w.chunks_exact(self.inputs).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += gi * w;
            }
        }
        out
    }

    /// Accumulates `g x^T` into `W` and `g` into `b`.
    pub(crate) fn accumulate(&mut self, g: &[f64], x: &[f64]) {
        for (row, gi) in self.w.chunks_exact_mut(self.inputs).zip(g) {
            for (w, xv) in row.iter_mut().zip(x) {
                *w += gi * xv;
            }
        }
        for (b, gi) in self.b.iter_mut().zip(g) {
            *b += gi;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Base,
    Trunk,
    Head,
}

/// Parameter groups held fixed during training.
pub type FreezeSet = BTreeSet<ParamGroup>;

/// Flat access to parameter blocks, used by the optimizer and the gradient
/// checker.
pub trait Parameters: Clone {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// `self -= lr * grad`
    fn sgd_step(&mut self, grad: &Self, lr: f64) {
        for (p, g) in self.blocks_mut().into_iter().zip(grad.blocks()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
    }
}

impl Parameters for Dense {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub base: Dense,
    pub trunk: Dense,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub hidden: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl EmbeddingModel {
    pub fn random(features: usize, hidden: usize, embedding: usize, rng: &mut Rng) -> Self {
        EmbeddingModel {
            base: Dense::random(features, hidden, rng),
            trunk: Dense::random(hidden, embedding, rng),
        }
    }

    pub fn zeros(features: usize, hidden: usize, embedding: usize) -> Self {
        EmbeddingModel {
            base: Dense::zeros(features, hidden),
            trunk: Dense::zeros(hidden, embedding),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.base.inputs
    }

    pub fn hidden_dim(&self) -> usize {
        self.base.outputs
    }

    pub fn embedding_dim(&self) -> usize {
        self.trunk.outputs
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Activations {
        let mut hidden = self.base.apply(x);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut embedding = self.trunk.apply(&hidden);
        embedding.iter_mut().for_each(|v| *v = v.tanh());
        Activations { hidden, embedding }
    }

    /// Backpropagates `d_embedding` through trunk and base, accumulating
    /// into `grads`. Frozen groups receive nothing.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        act: &Activations,
        d_embedding: &[f64],
        grads: &mut EmbeddingModel,
        freeze: &FreezeSet,
    ) {
        let base_frozen = freeze.contains(&ParamGroup::Base);
        let trunk_frozen = freeze.contains(&ParamGroup::Trunk);
        if base_frozen && trunk_frozen {
            return;
        }
        let d_pre_trunk: Vec<f64> = d_embedding
            .iter()
            .zip(&act.embedding)
            .map(|(g, e)| g * (1.0 - e * e))
            .collect();
        if !trunk_frozen {
            grads.trunk.accumulate(&d_pre_trunk, &act.hidden);
        }
        if !base_frozen {
            let d_hidden = self.trunk.back(&d_pre_trunk);
            let d_pre_base: Vec<f64> = d_hidden
                .iter()
                .zip(&act.hidden)
                .map(|(g, h)| g * (1.0 - h * h))
                .collect();
            grads.base.accumulate(&d_pre_base, x);
        }
    }

    /// `tanh(trunk(tanh(base(x))))`
    pub fn embed(&self, features: &[f64]) -> Result<Embedding> {
        if features.len() != self.feature_dim() {
            return Err(Error::DimMismatch {
                expected: self.feature_dim(),
                got: features.len(),
            });
        }
        Embedding::new(self.forward(features).embedding)
    }
}

impl Parameters for EmbeddingModel {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut v = self.base.blocks();
        v.extend(self.trunk.blocks());
        v
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.base.blocks_mut();
        v.extend(self.trunk.blocks_mut());
        v
    }
}

/// Softmax speaker-identification layer over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub layer: Dense,
}

impl ClassifierHead {
    pub fn random(embedding_dim: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "classifier needs >= 2 classes, got {classes}"
            )));
        }
        Ok(ClassifierHead {
            layer: Dense::random(embedding_dim, classes, rng),
        })
    }

    pub fn classes(&self) -> usize {
        self.layer.outputs
    }

    pub fn logits(&self, embedding: &[f64]) -> Vec<f64> {
        self.layer.apply(embedding)
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn predict(&self, embedding: &[f64]) -> usize {
        let logits = self.logits(embedding);
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        best
    }
}

impl Parameters for ClassifierHead {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layer.blocks()
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layer.blocks_mut()
    }
}

/// `sigmoid(w . (x1 * x2) + b)` over two embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseHead {
    pub w: Vec<f64>,
    pub b: f64,
}

impl SiameseHead {
    pub fn zeros(embedding_dim: usize) -> Self {
        SiameseHead {
            w: vec![0.0; embedding_dim],
            b: 0.0,
        }
    }

    pub fn random(embedding_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (embedding_dim as f64).sqrt();
        let w = (0..embedding_dim)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        SiameseHead {
            w,
            b: rng.uniform_range(-bound, bound),
        }
    }
}

impl Parameters for SiameseHead {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![&self.w, std::slice::from_ref(&self.b)]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, std::slice::from_mut(&mut self.b)]
    }
}

impl<A: Parameters, B: Parameters> Parameters for (A, B) {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut v = self.0.blocks();
        v.extend(self.1.blocks());
        v
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.0.blocks_mut();
        v.extend(self.1.blocks_mut());
        v
    }
}
