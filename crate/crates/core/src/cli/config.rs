//! Resolved experiment settings: one `key = value` file plus flag
//! overrides. Corpus keys are shared with [`CorpusSpec`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adapt::Technique;
use crate::cluster::ClusterMethod;
use crate::config::KvConfig;
use crate::corpus::CorpusSpec;
use crate::error::{Error, Result};
use crate::eval::Backend;
use crate::model::{
    InitMode, SiameseConfig, TrainConfig, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN_DIM,
};
use crate::textio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FromScratch,
    SiFinetune,
    SiameseFinetune,
    AdaptI,
    AdaptII,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FromScratch => "from-scratch",
            Method::SiFinetune => "si-finetune",
            Method::SiameseFinetune => "siamese-finetune",
            Method::AdaptI => "adapt-I",
            Method::AdaptII => "adapt-II",
        }
    }

    pub fn from_technique(t: Technique) -> Self {
        match t {
            Technique::I => Method::AdaptI,
            Technique::II => Method::AdaptII,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Method::FromScratch,
            Method::SiFinetune,
            Method::SiameseFinetune,
            Method::AdaptI,
            Method::AdaptII,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Learning rate, epochs and batch size of one SGD stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Schedule {
    fn reference() -> Self {
        let d = TrainConfig::si_default(InitMode::FineTune, 0);
        Schedule {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
        }
    }

    fn take(kv: &mut KvConfig, prefix: &str, d: Schedule) -> Result<Self> {
        Ok(Schedule {
            learning_rate: kv.take_or(&format!("{prefix}.learning_rate"), d.learning_rate)?,
            epochs: kv.take_or(&format!("{prefix}.epochs"), d.epochs)?,
            batch_size: kv.take_or(&format!("{prefix}.batch_size"), d.batch_size)?,
        })
    }

    fn put(&self, kv: &mut KvConfig, prefix: &str) {
        kv.set(
            &format!("{prefix}.learning_rate"),
            format!("{:?}", self.learning_rate),
        );
        kv.set(&format!("{prefix}.epochs"), self.epochs.to_string());
        kv.set(&format!("{prefix}.batch_size"), self.batch_size.to_string());
    }

    pub fn train_config(&self, init: InitMode, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            ..TrainConfig::si_default(init, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub out: PathBuf,
    pub channel: String,
    pub fraction: f64,
    pub method: Method,
    pub technique: Technique,
    pub clustering: ClusterMethod,
    /// Pseudo-speaker count; defaults to the true speaker count.
    pub k: Option<usize>,
    pub backend: Backend,
    pub n_pairs: usize,
    /// Size of the balanced training set; all segments when unset.
    pub train_segments: Option<usize>,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub source: Schedule,
    pub si: Schedule,
    pub siamese: SiameseConfig,
    pub adapt: Schedule,
    pub adapt_max_iterations: usize,
    pub cluster_n_init: usize,
    pub cluster_max_iter: usize,
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.corpus.seed
    }

    /// Parses a config file's text with `overrides` applied on top.
    pub fn resolve(text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut kv = KvConfig::parse(text)?;
        for (k, v) in overrides {
            kv.set(k, v.clone());
        }
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(&str, String)]) -> Result<Self> {
        match path {
            None => Self::resolve("", overrides),
            Some(p) => {
                let text = textio::read_to_string(p)?;
                Self::resolve(&text, overrides).map_err(|e| Error::in_file(p, e))
            }
        }
    }

    fn from_kv(kv: &mut KvConfig) -> Result<Self> {
        let corpus = CorpusSpec::from_kv(kv)?;
        let sd = SiameseConfig::reference_default(0);
        let reference = Schedule::reference();
        let cfg = ExperimentConfig {
            corpus,
            out: kv.take_or("out", PathBuf::from("out"))?,
            channel: kv.take_or("channel", "A".to_string())?,
            fraction: kv.take_or("fraction", 1.0)?,
            method: kv.take_or("method", Method::SiFinetune)?,
            technique: kv.take_or("technique", Technique::II)?,
            clustering: kv.take_or("clustering", ClusterMethod::KMeans)?,
            k: kv.take("k")?,
            backend: kv.take_or("backend", Backend::Cosine)?,
            n_pairs: kv.take_or("n_pairs", 2000)?,
            train_segments: kv.take("train_segments")?,
            hidden_dim: kv.take_or("model.hidden", DEFAULT_HIDDEN_DIM)?,
            embedding_dim: kv.take_or("model.embedding", DEFAULT_EMBEDDING_DIM)?,
            source: Schedule::take(kv, "source", reference)?,
            si: Schedule::take(kv, "si", reference)?,
            siamese: SiameseConfig {
                phase1_lr: kv.take_or("siamese.phase1_lr", sd.phase1_lr)?,
                phase2_lr: kv.take_or("siamese.phase2_lr", sd.phase2_lr)?,
                epochs: kv.take_or("siamese.epochs", sd.epochs)?,
                phase1_epochs: kv.take_or("siamese.phase1_epochs", sd.phase1_epochs)?,
                batch_size: kv.take_or("siamese.batch_size", sd.batch_size)?,
                seed: 0,
            },
            adapt: Schedule::take(kv, "adapt", reference)?,
            adapt_max_iterations: kv.take_or("adapt.max_iterations", 5)?,
            cluster_n_init: kv.take_or("cluster.n_init", 10)?,
            cluster_max_iter: kv.take_or("cluster.max_iter", 300)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.corpus.channel(&self.channel).is_none() {
            return Err(Error::invalid(format!(
                "channel `{}` is not in the corpus",
                self.channel
            )));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "fraction {} outside (0, 1]",
                self.fraction
            )));
        }
        if self.n_pairs == 0 || !self.n_pairs.is_multiple_of(2) {
            return Err(Error::invalid("n_pairs must be even and positive"));
        }
        if self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.k.is_some_and(|k| k < 2) {
            return Err(Error::invalid("k must be >= 2"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields the same config.
    pub fn to_text(&self) -> String {
        let mut kv = KvConfig::parse(&self.corpus.to_config_text()).expect("own output parses");
        kv.set("out", self.out.display().to_string());
        kv.set("channel", self.channel.clone());
        kv.set("fraction", format!("{:?}", self.fraction));
        kv.set("method", self.method.as_str());
        kv.set("technique", format!("{:?}", self.technique));
        kv.set("clustering", self.clustering.to_string());
        if let Some(k) = self.k {
            kv.set("k", k.to_string());
        }
        kv.set("backend", self.backend.to_string());
        kv.set("n_pairs", self.n_pairs.to_string());
        if let Some(n) = self.train_segments {
            kv.set("train_segments", n.to_string());
        }
        kv.set("model.hidden", self.hidden_dim.to_string());
        kv.set("model.embedding", self.embedding_dim.to_string());
        self.source.put(&mut kv, "source");
        self.si.put(&mut kv, "si");
        let s = &self.siamese;
        kv.set("siamese.phase1_lr", format!("{:?}", s.phase1_lr));
        kv.set("siamese.phase2_lr", format!("{:?}", s.phase2_lr));
        kv.set("siamese.epochs", s.epochs.to_string());
        kv.set("siamese.phase1_epochs", s.phase1_epochs.to_string());
        kv.set("siamese.batch_size", s.batch_size.to_string());
        self.adapt.put(&mut kv, "adapt");
        kv.set(
            "adapt.max_iterations",
            self.adapt_max_iterations.to_string(),
        );
        kv.set("cluster.n_init", self.cluster_n_init.to_string());
        kv.set("cluster.max_iter", self.cluster_max_iter.to_string());
        kv.to_text()
    }
}
