use std::collections::{BTreeMap, BTreeSet};

use super::spec::{ChannelRecipe, ChannelSpec, CorpusSpec};
use super::{filter_min_segments, source_speaker_id, speaker_id};
use crate::data::{PreparedDataset, Role, SegmentRecord, SEGMENT_SECONDS};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One recording as heard through one channel, before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub recording_id: String,
    pub speaker_id: String,
    pub duration_s: f64,
    pub speech_fraction: f64,
    /// Speaker centroid plus recording offset, passed through the channel.
    pub base_vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ChannelCorpus {
    pub channel: ChannelSpec,
    pub recordings: Vec<RawRecording>,
}

struct Clean {
    recording_id: String,
    speaker_id: String,
    duration_s: f64,
    speech_fraction: f64,
    vector: Vec<f64>,
}

/// `F x r` loadings with `N(0, 1/r)` entries, shared by every population
/// drawn from the same root generator.
fn basis(spec: &CorpusSpec, r: usize, rng: &Rng, stream: u64) -> Option<Vec<Vec<f64>>> {
    if r == 0 || r >= spec.feature_dim {
        return None;
    }
    let mut draw = rng.derive(stream);
    let sd = (1.0 / r as f64).sqrt();
    Some(
        (0..spec.feature_dim)
            .map(|_| (0..r).map(|_| draw.gaussian(0.0, sd)).collect())
            .collect(),
    )
}

fn project(basis: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    basis
        .iter()
        .map(|row| row.iter().zip(z).map(|(p, z)| p * z).sum())
        .collect()
}

struct Bases {
    speaker: Option<Vec<Vec<f64>>>,
    session: Option<Vec<Vec<f64>>>,
}

impl Bases {
    fn new(spec: &CorpusSpec, rng: &Rng) -> Self {
        Bases {
            speaker: basis(spec, spec.speaker_rank, rng, 50),
            session: basis(spec, spec.session_rank, rng, 51),
        }
    }
}

fn draw_population(
    spec: &CorpusSpec,
    n_speakers: usize,
    id: impl Fn(usize) -> String,
    bases: &Bases,
    draw: &mut Rng,
) -> Vec<Clean> {
    let sigma = spec.speaker_centroid_sigma;
    let mut clean = Vec::new();
    for s in 0..n_speakers {
        let centroid: Vec<f64> = match &bases.speaker {
            None => (0..spec.feature_dim)
                .map(|_| draw.gaussian(0.0, sigma))
                .collect(),
            Some(b) => {
                let z: Vec<f64> = (0..spec.speaker_rank)
                    .map(|_| draw.gaussian(0.0, sigma))
                    .collect();
                project(b, &z)
            }
        };
        let n_rec = spec.recordings_per_speaker.sample(draw).round().max(1.0) as usize;
        for r in 0..n_rec {
            let mut vector: Vec<f64> = centroid
                .iter()
                .map(|c| c + draw.gaussian(0.0, spec.within_speaker_sigma))
                .collect();
            if let Some(b) = &bases.session {
                let z: Vec<f64> = (0..spec.session_rank)
                    .map(|_| draw.gaussian(0.0, spec.session_sigma))
                    .collect();
                for (v, n) in vector.iter_mut().zip(project(b, &z)) {
                    *v += n;
                }
            }
            let duration_s = spec
                .recording_duration_s
                .sample(draw)
                .max(f64::MIN_POSITIVE);
            let speech_fraction = spec.speech_fraction.sample(draw).clamp(1e-6, 1.0);
            clean.push(Clean {
                recording_id: format!("{}_r{r:02}", id(s)),
                speaker_id: id(s),
                duration_s,
                speech_fraction,
                vector,
            });
        }
    }
    clean
}

fn transmit_all(
    clean: &[Clean],
    recipe: &ChannelRecipe,
    dim: usize,
    rng: &mut Rng,
) -> ChannelCorpus {
    let channel = recipe.realize(dim, rng);
    let recordings = clean
        .iter()
        .map(|c| {
            let mut base_vector = channel.transmit(&c.vector);
            for v in base_vector.iter_mut() {
                *v += rng.gaussian(0.0, channel.noise_sigma);
            }
            RawRecording {
                recording_id: c.recording_id.clone(),
                speaker_id: c.speaker_id.clone(),
                duration_s: c.duration_s,
                speech_fraction: c.speech_fraction,
                base_vector,
            }
        })
        .collect();
    ChannelCorpus {
        channel,
        recordings,
    }
}

/// Draws speakers and recordings once, then transmits every recording
/// through every channel. Speaker `i` gets ID `speaker_id(i)`.
pub fn generate_corpus(spec: &CorpusSpec, rng: &Rng) -> Result<Vec<ChannelCorpus>> {
    spec.validate()?;
    let bases = Bases::new(spec, rng);
    let clean = draw_population(
        spec,
        spec.n_speakers,
        speaker_id,
        &bases,
        &mut rng.derive(0),
    );
    Ok(spec
        .channels
        .iter()
        .enumerate()
        .map(|(ci, recipe)| {
            transmit_all(
                &clean,
                recipe,
                spec.feature_dim,
                &mut rng.derive(1 + ci as u64),
            )
        })
        .collect())
}

/// A disjoint speaker population heard through channel `I` only (clean,
/// noiseless if the corpus has no `I`), used for pretraining. Speaker `i` gets
/// ID `source_speaker_id(i)`.
pub fn generate_source(spec: &CorpusSpec, rng: &Rng) -> Result<ChannelCorpus> {
    spec.validate()?;
    if spec.source_speakers == 0 {
        return Err(Error::invalid("source_speakers must be positive"));
    }
    let bases = Bases::new(spec, rng);
    let clean = draw_population(
        spec,
        spec.source_speakers,
        source_speaker_id,
        &bases,
        &mut rng.derive(100),
    );
    let recipe = spec
        .channel("I")
        .cloned()
        .unwrap_or_else(|| ChannelRecipe::clean("I", 0.0));
    Ok(transmit_all(
        &clean,
        &recipe,
        spec.feature_dim,
        &mut rng.derive(101),
    ))
}

/// Separates the development speakers (the `dev_speakers` highest IDs) from
/// the training speakers.
pub fn split_dev_recordings(
    spec: &CorpusSpec,
    recordings: &[RawRecording],
) -> (Vec<RawRecording>, Vec<RawRecording>) {
    let first_dev = speaker_id(spec.n_speakers - spec.dev_speakers.min(spec.n_speakers));
    recordings
        .iter()
        .cloned()
        .partition(|r| r.speaker_id < first_dev)
}

/// Seconds of speech a VAD pass would retain.
pub fn simulate_vad(rec: &RawRecording) -> f64 {
    rec.duration_s * rec.speech_fraction
}

/// `floor(speech / 8)` segments; the remainder is discarded. Each segment is
/// the recording vector plus fresh `N(0, noise_sigma^2)` noise.
pub fn segment_recording(
    rec: &RawRecording,
    speech_duration_s: f64,
    noise_sigma: f64,
    rng: &mut Rng,
) -> Vec<SegmentRecord> {
    let n = if speech_duration_s.is_finite() && speech_duration_s >= SEGMENT_SECONDS {
        (speech_duration_s / SEGMENT_SECONDS).floor() as usize
    } else {
        0
    };
    (0..n)
        .map(|k| SegmentRecord {
            segment_id: format!("{}_s{k:03}", rec.recording_id),
            recording_id: rec.recording_id.clone(),
            speaker_id: Some(rec.speaker_id.clone()),
            features: rec
                .base_vector
                .iter()
                .map(|v| v + rng.gaussian(0.0, noise_sigma))
                .collect(),
        })
        .collect()
}

/// Files / speakers / hours before and after preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PreprocessReport {
    pub files_before: usize,
    pub files_after: usize,
    pub speakers_before: usize,
    pub speakers_after: usize,
    pub hours_before: f64,
    pub hours_after: f64,
    pub segments_before_filter: usize,
    pub segments_after: usize,
}

/// VAD, segmentation and minimum-segment filtering for one channel.
pub fn preprocess(
    recordings: &[RawRecording],
    noise_sigma: f64,
    role: Role,
    channel: &str,
    rng: &mut Rng,
) -> Result<(PreparedDataset, PreprocessReport)> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma must be finite and >= 0"));
    }
    let mut report = PreprocessReport {
        files_before: recordings.len(),
        speakers_before: recordings
            .iter()
            .map(|r| r.speaker_id.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        hours_before: recordings.iter().map(|r| r.duration_s).sum::<f64>() / 3600.0,
        ..Default::default()
    };
    let mut segments = Vec::new();
    for rec in recordings {
        let speech = simulate_vad(rec);
        segments.extend(segment_recording(rec, speech, noise_sigma, rng));
    }
    report.segments_before_filter = segments.len();
    let dataset = PreparedDataset::new(segments, role, channel);
    let dataset = filter_min_segments(&dataset, role.min_segments_per_speaker());
    let mut files: BTreeMap<&str, ()> = BTreeMap::new();
    for s in &dataset.segments {
        files.insert(&s.recording_id, ());
    }
    report.files_after = files.len();
    report.speakers_after = dataset.by_speaker().len();
    report.segments_after = dataset.len();
    report.hours_after = dataset.len() as f64 * SEGMENT_SECONDS / 3600.0;
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ChannelRecipe, Spread};

    fn tiny_spec() -> CorpusSpec {
        CorpusSpec {
            n_speakers: 1,
            dev_speakers: 0,
            source_speakers: 0,
            recordings_per_speaker: Spread::fixed(1.0),
            recording_duration_s: Spread::fixed(40.0),
            speech_fraction: Spread::fixed(1.0),
            speaker_centroid_sigma: 1.0,
            speaker_rank: 0,
            session_rank: 0,
            session_sigma: 0.0,
            within_speaker_sigma: 0.1,
            feature_dim: 4,
            channels: vec![ChannelRecipe::clean("I", 0.0)],
            seed: 0,
        }
    }

    fn rec(duration: f64, fraction: f64) -> RawRecording {
        RawRecording {
            recording_id: "spk00000_r00".into(),
            speaker_id: "spk00000".into(),
            duration_s: duration,
            speech_fraction: fraction,
            base_vector: vec![1.0, 2.0],
        }
    }

    #[test]
    fn single_speaker_single_recording() {
        let c = generate_corpus(&tiny_spec(), &Rng::new(1)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].recordings.len(), 1);
    }

    #[test]
    fn counts_scale_with_channels() {
        let mut spec = tiny_spec();
        spec.n_speakers = 50;
        spec.recordings_per_speaker = Spread::fixed(5.0);
        spec.channels = CorpusSpec::default().channels;
        let c = generate_corpus(&spec, &Rng::new(1)).unwrap();
        assert_eq!(c.iter().map(|ch| ch.recordings.len()).sum::<usize>(), 750);
    }

    #[test]
    fn identity_channel_without_noise_keeps_vectors() {
        let mut spec = tiny_spec();
        spec.channels = vec![
            ChannelRecipe::clean("I", 0.0),
            ChannelRecipe::clean("X", 0.0),
        ];
        spec.n_speakers = 3;
        let c = generate_corpus(&spec, &Rng::new(9)).unwrap();
        for (a, b) in c[0].recordings.iter().zip(&c[1].recordings) {
            assert_eq!(a.base_vector, b.base_vector);
        }
        let mut rng = Rng::new(0);
        let segs = segment_recording(&c[0].recordings[0], 40.0, 0.0, &mut rng);
        assert_eq!(segs.len(), 5);
        assert!(segs
            .iter()
            .all(|s| s.features == c[0].recordings[0].base_vector));
    }

    #[test]
    fn non_positive_counts_rejected() {
        let mut spec = tiny_spec();
        spec.n_speakers = 0;
        assert!(generate_corpus(&spec, &Rng::new(0)).is_err());
        let mut spec = tiny_spec();
        spec.recordings_per_speaker = Spread::fixed(0.0);
        assert!(generate_corpus(&spec, &Rng::new(0)).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec {
            n_speakers: 5,
            dev_speakers: 1,
            ..Default::default()
        };
        let a = generate_corpus(&spec, &Rng::new(4)).unwrap();
        let b = generate_corpus(&spec, &Rng::new(4)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.recordings, y.recordings);
        }
    }

    #[test]
    fn source_population_is_disjoint_and_clean() {
        let spec = CorpusSpec {
            n_speakers: 10,
            dev_speakers: 2,
            source_speakers: 7,
            ..Default::default()
        };
        let src = generate_source(&spec, &Rng::new(3)).unwrap();
        let target = generate_corpus(&spec, &Rng::new(3)).unwrap();
        let speakers: BTreeSet<&str> = src
            .recordings
            .iter()
            .map(|r| r.speaker_id.as_str())
            .collect();
        assert_eq!(speakers.len(), 7);
        assert!(target[0]
            .recordings
            .iter()
            .all(|r| !speakers.contains(r.speaker_id.as_str())));
        assert_eq!(src.channel.name, "I");
        let again = generate_source(&spec, &Rng::new(3)).unwrap();
        assert_eq!(src.recordings, again.recordings);
    }

    #[test]
    fn dev_speakers_are_the_highest_ids() {
        let spec = CorpusSpec {
            n_speakers: 12,
            dev_speakers: 3,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec, &Rng::new(1)).unwrap();
        let (train, dev) = split_dev_recordings(&spec, &corpus[0].recordings);
        let dev_spk: BTreeSet<&str> = dev.iter().map(|r| r.speaker_id.as_str()).collect();
        assert_eq!(
            dev_spk,
            ["spk00009", "spk00010", "spk00011"].into_iter().collect()
        );
        assert_eq!(train.len() + dev.len(), corpus[0].recordings.len());
    }

    #[test]
    fn vad_examples() {
        assert_eq!(simulate_vad(&rec(100.0, 1.0)), 100.0);
        assert_eq!(simulate_vad(&rec(100.0, 0.05)), 5.0);
        assert!(simulate_vad(&rec(7.0, 1.0)) < SEGMENT_SECONDS);
    }

    #[test]
    fn segmentation_boundaries() {
        let mut rng = Rng::new(0);
        let r = rec(100.0, 1.0);
        assert_eq!(segment_recording(&r, 7.9, 0.1, &mut rng).len(), 0);
        assert_eq!(segment_recording(&r, 8.0, 0.1, &mut rng).len(), 1);
        let segs = segment_recording(&r, 25.0, 0.1, &mut rng);
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.duration_s() == 8.0));
        let ids: BTreeSet<_> = segs.iter().map(|s| &s.segment_id).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn segment_total_matches_floor_sum() {
        let spec = CorpusSpec {
            n_speakers: 20,
            dev_speakers: 0,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec, &Rng::new(2)).unwrap();
        let ch = &corpus[0];
        let expected: usize = ch
            .recordings
            .iter()
            .map(|r| (simulate_vad(r) / 8.0).floor() as usize)
            .sum();
        let (_, report) = preprocess(
            &ch.recordings,
            ch.channel.noise_sigma,
            Role::Train,
            "I",
            &mut Rng::new(0),
        )
        .unwrap();
        assert_eq!(report.segments_before_filter, expected);
        assert!(report.files_before >= report.files_after);
        assert!(report.speakers_before >= report.speakers_after);
        assert!(report.hours_before >= report.hours_after);
    }
}
