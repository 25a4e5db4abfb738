use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A scalar drawn uniformly from `[mean - spread, mean + spread]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub spread: f64,
}

impl Spread {
    pub const fn fixed(mean: f64) -> Self {
        Spread { mean, spread: 0.0 }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.spread == 0.0 {
            self.mean
        } else {
            rng.uniform_range(self.mean - self.spread, self.mean + self.spread)
        }
    }
}

/// Realized affine-plus-noise channel: `mix * x + offset + N(0, noise_sigma^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    /// Row-major `F x F`.
    pub mix: Vec<f64>,
    pub offset: Vec<f64>,
    pub noise_sigma: f64,
}

impl ChannelSpec {
    pub fn identity(name: &str, dim: usize, noise_sigma: f64) -> Self {
        let mut mix = vec![0.0; dim * dim];
        for i in 0..dim {
            mix[i * dim + i] = 1.0;
        }
        ChannelSpec {
            name: name.to_string(),
            mix,
            offset: vec![0.0; dim],
            noise_sigma,
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Deterministic part of the channel, no noise.
    pub fn transmit(&self, x: &[f64]) -> Vec<f64> {
        let f = self.dim();
        (0..f)
            .map(|r| {
                let row = &self.mix[r * f..(r + 1) * f];
                row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>() + self.offset[r]
            })
            .collect()
    }
}

/// Recipe that a [`ChannelSpec`] is realized from.
///
/// `mix = diag(g) * (I + distortion * G / sqrt(F))` with `G` standard normal
/// and `g_j = exp(gain_sigma * z_j)`; `offset ~ N(0, offset_sigma^2)`.
/// All-zero knobs give the identity channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRecipe {
    pub name: String,
    pub distortion: f64,
    pub gain_sigma: f64,
    pub offset_sigma: f64,
    pub noise_sigma: f64,
}

impl ChannelRecipe {
    pub fn clean(name: &str, noise_sigma: f64) -> Self {
        ChannelRecipe {
            name: name.to_string(),
            distortion: 0.0,
            gain_sigma: 0.0,
            offset_sigma: 0.0,
            noise_sigma,
        }
    }

    pub fn realize(&self, dim: usize, rng: &mut Rng) -> ChannelSpec {
        let mut spec = ChannelSpec::identity(&self.name, dim, self.noise_sigma);
        let scale = self.distortion / (dim as f64).sqrt();
        let gains: Vec<f64> = (0..dim)
            .map(|_| (self.gain_sigma * rng.normal()).exp())
            .collect();
        for r in 0..dim {
            for c in 0..dim {
                let base = if r == c { 1.0 } else { 0.0 };
                spec.mix[r * dim + c] = gains[r] * (base + scale * rng.normal());
            }
        }
        for o in spec.offset.iter_mut() {
            *o = self.offset_sigma * rng.normal();
        }
        spec
    }

    fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("distortion", self.distortion),
            ("gain_sigma", self.gain_sigma),
            ("offset_sigma", self.offset_sigma),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "channel {}: {what} must be finite and >= 0",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    /// Speakers (highest IDs excluded) assigned to the development pool.
    pub dev_speakers: usize,
    /// Size of the separate clean-channel population used for pretraining.
    pub source_speakers: usize,
    pub recordings_per_speaker: Spread,
    pub recording_duration_s: Spread,
    pub speech_fraction: Spread,
    pub speaker_centroid_sigma: f64,
    /// When in `1..feature_dim`, centroids lie in a random subspace of this
    /// rank shared by the target and source populations; 0 means isotropic.
    pub speaker_rank: usize,
    /// Recording-level nuisance confined to a shared random subspace of
    /// this rank, scaled by `session_sigma`; 0 disables it.
    pub session_rank: usize,
    pub session_sigma: f64,
    pub within_speaker_sigma: f64,
    pub feature_dim: usize,
    pub channels: Vec<ChannelRecipe>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_speakers: 300,
            dev_speakers: 60,
            source_speakers: 200,
            recordings_per_speaker: Spread {
                mean: 3.0,
                spread: 1.0,
            },
            recording_duration_s: Spread {
                mean: 120.0,
                spread: 60.0,
            },
            speech_fraction: Spread {
                mean: 0.4,
                spread: 0.3,
            },
            speaker_centroid_sigma: 1.0,
            speaker_rank: 0,
            session_rank: 0,
            session_sigma: 0.0,
            within_speaker_sigma: 0.25,
            feature_dim: 32,
            channels: vec![
                ChannelRecipe::clean("I", 0.3),
                ChannelRecipe {
                    name: "A".into(),
                    distortion: 0.6,
                    gain_sigma: 0.8,
                    offset_sigma: 0.5,
                    noise_sigma: 0.6,
                },
                ChannelRecipe {
                    name: "D".into(),
                    distortion: 0.4,
                    gain_sigma: 0.5,
                    offset_sigma: 0.3,
                    noise_sigma: 0.45,
                },
            ],
            seed: 0,
        }
    }
}

const SCALAR_KEYS: &[&str] = &[
    "n_speakers",
    "dev_speakers",
    "source_speakers",
    "recordings_per_speaker_mean",
    "recordings_per_speaker_spread",
    "recording_duration_mean",
    "recording_duration_spread",
    "speech_fraction_mean",
    "speech_fraction_spread",
    "speaker_centroid_sigma",
    "speaker_rank",
    "session_rank",
    "session_sigma",
    "within_speaker_sigma",
    "feature_dim",
    "seed",
    "channels",
];

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 {
            return Err(Error::invalid("n_speakers must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if self.dev_speakers > self.n_speakers {
            return Err(Error::invalid("dev_speakers exceeds n_speakers"));
        }
        if self.recordings_per_speaker.mean - self.recordings_per_speaker.spread < 0.5 {
            return Err(Error::invalid("recordings_per_speaker must be positive"));
        }
        if self.recording_duration_s.mean - self.recording_duration_s.spread <= 0.0 {
            return Err(Error::invalid("recording duration must be positive"));
        }
        let sf = self.speech_fraction;
        if sf.mean - sf.spread <= 0.0 || sf.mean + sf.spread > 1.0 {
            return Err(Error::invalid("speech_fraction must lie in (0, 1]"));
        }
        for (what, v) in [
            ("speaker_centroid_sigma", self.speaker_centroid_sigma),
            ("within_speaker_sigma", self.within_speaker_sigma),
            ("session_sigma", self.session_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{what} must be finite and >= 0")));
            }
        }
        if self.channels.is_empty() {
            return Err(Error::invalid("at least one channel is required"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            c.validate()?;
            if self.channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::invalid(format!("duplicate channel `{}`", c.name)));
            }
        }
        Ok(())
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelRecipe> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Reads a `key = value` file. Keys absent from the file keep their
    /// defaults; unknown keys are errors.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KvConfig::parse(text)?;
        let spec = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(spec)
    }

    /// Consumes the corpus keys from `kv`, leaving everything else.
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self> {
        let d = CorpusSpec::default();
        let mut spec = CorpusSpec {
            n_speakers: kv.take_or("n_speakers", d.n_speakers)?,
            dev_speakers: kv.take_or("dev_speakers", d.dev_speakers)?,
            source_speakers: kv.take_or("source_speakers", d.source_speakers)?,
            recordings_per_speaker: Spread {
                mean: kv.take_or("recordings_per_speaker_mean", d.recordings_per_speaker.mean)?,
                spread: kv.take_or(
                    "recordings_per_speaker_spread",
                    d.recordings_per_speaker.spread,
                )?,
            },
            recording_duration_s: Spread {
                mean: kv.take_or("recording_duration_mean", d.recording_duration_s.mean)?,
                spread: kv.take_or("recording_duration_spread", d.recording_duration_s.spread)?,
            },
            speech_fraction: Spread {
                mean: kv.take_or("speech_fraction_mean", d.speech_fraction.mean)?,
                spread: kv.take_or("speech_fraction_spread", d.speech_fraction.spread)?,
            },
            speaker_centroid_sigma: kv
                .take_or("speaker_centroid_sigma", d.speaker_centroid_sigma)?,
            speaker_rank: kv.take_or("speaker_rank", d.speaker_rank)?,
            session_rank: kv.take_or("session_rank", d.session_rank)?,
            session_sigma: kv.take_or("session_sigma", d.session_sigma)?,
            within_speaker_sigma: kv.take_or("within_speaker_sigma", d.within_speaker_sigma)?,
            feature_dim: kv.take_or("feature_dim", d.feature_dim)?,
            channels: d.channels.clone(),
            seed: kv.take_or("seed", d.seed)?,
        };
        if let Some(list) = kv.take::<String>("channels")? {
            spec.channels = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|name| {
                    d.channel(name)
                        .cloned()
                        .unwrap_or_else(|| ChannelRecipe::clean(name, 0.0))
                })
                .collect();
        }
        for ch in spec.channels.iter_mut() {
            let p = format!("channel.{}.", ch.name);
            ch.distortion = kv.take_or(&format!("{p}distortion"), ch.distortion)?;
            ch.gain_sigma = kv.take_or(&format!("{p}gain_sigma"), ch.gain_sigma)?;
            ch.offset_sigma = kv.take_or(&format!("{p}offset_sigma"), ch.offset_sigma)?;
            ch.noise_sigma = kv.take_or(&format!("{p}noise_sigma"), ch.noise_sigma)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_text(&self) -> String {
        let mut kv = KvConfig::default();
        kv.set("n_speakers", self.n_speakers.to_string());
        kv.set("dev_speakers", self.dev_speakers.to_string());
        kv.set("source_speakers", self.source_speakers.to_string());
        kv.set(
            "recordings_per_speaker_mean",
            format!("{:?}", self.recordings_per_speaker.mean),
        );
        kv.set(
            "recordings_per_speaker_spread",
            format!("{:?}", self.recordings_per_speaker.spread),
        );
        kv.set(
            "recording_duration_mean",
            format!("{:?}", self.recording_duration_s.mean),
        );
        kv.set(
            "recording_duration_spread",
            format!("{:?}", self.recording_duration_s.spread),
        );
        kv.set(
            "speech_fraction_mean",
            format!("{:?}", self.speech_fraction.mean),
        );
        kv.set(
            "speech_fraction_spread",
            format!("{:?}", self.speech_fraction.spread),
        );
        kv.set(
            "speaker_centroid_sigma",
            format!("{:?}", self.speaker_centroid_sigma),
        );
        kv.set("speaker_rank", self.speaker_rank.to_string());
        kv.set("session_rank", self.session_rank.to_string());
        kv.set("session_sigma", format!("{:?}", self.session_sigma));
        kv.set(
            "within_speaker_sigma",
            format!("{:?}", self.within_speaker_sigma),
        );
        kv.set("feature_dim", self.feature_dim.to_string());
        kv.set("seed", self.seed.to_string());
        let names: Vec<&str> = self.channels.iter().map(|c| c.name.as_str()).collect();
        kv.set("channels", names.join(","));
        for c in &self.channels {
            let p = format!("channel.{}.", c.name);
            kv.set(&format!("{p}distortion"), format!("{:?}", c.distortion));
            kv.set(&format!("{p}gain_sigma"), format!("{:?}", c.gain_sigma));
            kv.set(&format!("{p}offset_sigma"), format!("{:?}", c.offset_sigma));
            kv.set(&format!("{p}noise_sigma"), format!("{:?}", c.noise_sigma));
        }
        debug_assert!(SCALAR_KEYS.iter().all(|k| kv.contains(k)));
        kv.to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrip() {
        let spec = CorpusSpec::default();
        let text = spec.to_config_text();
        assert_eq!(CorpusSpec::from_config_text(&text).unwrap(), spec);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let spec =
            CorpusSpec::from_config_text("n_speakers = 10\ndev_speakers = 2\nchannels = I\n")
                .unwrap();
        assert_eq!(spec.n_speakers, 10);
        assert_eq!(spec.channels.len(), 1);
        assert!(CorpusSpec::from_config_text("n_speaker = 10\n").is_err());
        assert!(CorpusSpec::from_config_text("n_speakers = 0\n").is_err());
        assert!(CorpusSpec::from_config_text("channel.I.noise_sigma = -1\n").is_err());
        // keys for channels that are not selected are unknown
        assert!(CorpusSpec::from_config_text("channels = I\nchannel.A.noise_sigma = 1\n").is_err());
    }

    #[test]
    fn clean_recipe_is_identity() {
        let mut rng = Rng::new(3);
        let ch = ChannelRecipe::clean("I", 0.0).realize(4, &mut rng);
        assert_eq!(ch, ChannelSpec::identity("I", 4, 0.0));
        assert_eq!(ch.transmit(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
    }
}
