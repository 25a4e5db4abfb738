//! Synthetic multi-channel speaker corpora and the dataset preparation
//! pipeline: VAD, 8-second segmentation, speaker filtering, balanced
//! training-set selection, speaker-prefix subsets, dev halving and trial
//! generation.

mod generate;
mod prepare;
mod spec;

pub use generate::{
    generate_corpus, generate_source, preprocess, segment_recording, simulate_vad,
    split_dev_recordings, ChannelCorpus, PreprocessReport, RawRecording,
};
pub use prepare::{
    build_training_set, filter_min_segments, generate_pairs, select_subset, split_dev_speakers,
    SUPPORTED_FRACTIONS,
};
pub use spec::{ChannelRecipe, ChannelSpec, CorpusSpec, Spread};

/// Zero-padded so that lexicographic order equals numeric order.
pub fn speaker_id(index: usize) -> String {
    format!("spk{index:05}")
}

/// IDs of the pretraining population, disjoint from `speaker_id`.
pub fn source_speaker_id(index: usize) -> String {
    format!("src{index:05}")
}
