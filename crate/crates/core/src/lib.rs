//! Source-free domain adaptation for speaker verification on synthetic
//! multi-channel corpora.
//!
//! The crate covers the whole experimental pipeline:
//!
//! * [`corpus`]: seeded speaker corpora heard through affine-plus-noise
//!   channels, VAD and 8-second segmentation, speaker filtering, balanced
//!   training sets, speaker-prefix subsets, dev halving and 50/50 trials.
//! * [`model`]: a two-layer tanh embedding network with a softmax
//!   identification head and a Siamese head `sigmoid(w . (x1 * x2) + b)`,
//!   trained by plain mini-batch SGD with hand-derived gradients.
//! * [`cluster`]: k-means++ / Lloyd and average-linkage cosine AHC.
//! * [`adapt`]: the iterative embed / cluster / pseudo-label / fine-tune
//!   loop that adapts a pretrained checkpoint to unlabeled target data.
//! * [`eval`]: cosine and Siamese trial scoring and equal error rate.
//! * [`cli`]: the stage commands behind the `spkadapt` binary.

pub mod adapt;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
mod textio;

pub use embedding::{cosine_similarity, mean_embedding, Embedding, EmbeddingSet};
pub use error::{Error, Result};
pub use rng::Rng;
