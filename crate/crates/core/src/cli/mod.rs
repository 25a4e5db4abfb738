//! Command-line driver. Every stage reads and writes plain files in the
//! output directory, so stages can be rerun independently.
//!
//! Artifacts, for channel `<ch>` and subset fraction `<f>`:
//!
//! | stage | files |
//! |---|---|
//! | `generate` | `source.tsv`, `<ch>_train.tsv`, `<ch>_dev.tsv` |
//! | `prepare` | `<ch>_train_f<f>.tsv`, `<ch>_val.tsv`, `<ch>_test.tsv`, matching `*_trials.tsv` |
//! | `train-si --source` | `pretrained.ckpt` |
//! | `train-si`, `train-siamese`, `adapt` | `<ch>_<method>_f<f>.ckpt` |
//! | `eval` | `<ch>_<tag>_<backend>_scores.tsv`, `<ch>_<tag>_<backend>_eer.txt` |

pub mod config;
pub mod pipeline;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapt::{run_adapt_loop, AdaptConfig};
use crate::cluster::ClusterConfig;
use crate::corpus::{
    build_training_set, generate_corpus, generate_pairs, generate_source, preprocess,
    select_subset, split_dev_recordings, split_dev_speakers, PreprocessReport, SUPPORTED_FRACTIONS,
};
use crate::data::{parse_trials, trials_to_text, PreparedDataset, Role, TrialPair};
use crate::error::{Error, Result};
use crate::eval::{scores_to_text, Backend};
use crate::model::{train_siamese, Checkpoint, EmbeddingModel, EpochRecord, InitMode};
use crate::rng::Rng;
use crate::textio;

pub use config::{ExperimentConfig, Method, Schedule};

#[derive(Debug, Parser)]
#[command(
    name = "spkadapt",
    version,
    about = "Source-free speaker verification adaptation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key = value` experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Target channel (I, A or D).
    #[arg(long)]
    pub channel: Option<String>,
    /// Training subset as a fraction of speakers.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the corpus and write per-channel segment manifests.
    Generate(CommonArgs),
    /// Build the training subset, dev halves and trial lists.
    Prepare {
        #[command(flatten)]
        common: CommonArgs,
        /// Verify that smaller subsets are speaker prefixes of larger ones.
        #[arg(long)]
        check: bool,
    },
    /// Identification training: source pretraining or target training.
    TrainSi {
        #[command(flatten)]
        common: CommonArgs,
        /// Pretrain on the source population instead.
        #[arg(long)]
        source: bool,
        /// `from-scratch` or `si-finetune`.
        #[arg(long)]
        method: Option<String>,
    },
    /// Two-phase Siamese fine-tuning of the pretrained model.
    TrainSiamese(CommonArgs),
    /// Unsupervised cluster-and-learn adaptation of the pretrained model.
    Adapt {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        technique: Option<String>,
        #[arg(long)]
        clustering: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score the test trials and report the EER.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        backend: Option<String>,
        /// Score the pretrained checkpoint.
        #[arg(long)]
        baseline: bool,
        /// Which trained checkpoint to score.
        #[arg(long)]
        method: Option<String>,
        /// Score this checkpoint instead.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Prepare { .. } => "prepare",
            Command::TrainSi { .. } => "train-si",
            Command::TrainSiamese(_) => "train-siamese",
            Command::Adapt { .. } => "adapt",
            Command::Eval { .. } => "eval",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Generate(c) | Command::TrainSiamese(c) => c,
            Command::Prepare { common, .. }
            | Command::TrainSi { common, .. }
            | Command::Adapt { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }

    fn overrides(&self) -> Vec<(&'static str, String)> {
        let c = self.common();
        let mut o = Vec::new();
        if let Some(s) = c.seed {
            o.push(("seed", s.to_string()));
        }
        if let Some(p) = &c.out {
            o.push(("out", p.display().to_string()));
        }
        if let Some(ch) = &c.channel {
            o.push(("channel", ch.clone()));
        }
        if let Some(f) = c.fraction {
            o.push(("fraction", format!("{f:?}")));
        }
        match self {
            Command::TrainSi {
                method: Some(m), ..
            }
            | Command::Eval {
                method: Some(m), ..
            } => {
                o.push(("method", m.clone()));
            }
            Command::Adapt {
                technique,
                clustering,
                k,
                ..
            } => {
                if let Some(t) = technique {
                    o.push(("technique", t.clone()));
                }
                if let Some(c) = clustering {
                    o.push(("clustering", c.clone()));
                }
                if let Some(k) = k {
                    o.push(("k", k.to_string()));
                }
            }
            _ => {}
        }
        if let Command::Eval {
            backend: Some(b), ..
        } = self
        {
            o.push(("backend", b.clone()));
        }
        o
    }
}

/// Runs one command and returns what it prints on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cmd = &cli.command;
    let cfg = ExperimentConfig::load(cmd.common().config.as_deref(), &cmd.overrides())?;
    let ctx = Ctx { cfg };
    ctx.write(&format!("{}.conf", cmd.name()), &ctx.cfg.to_text())?;
    match cmd {
        Command::Generate(_) => ctx.generate(),
        Command::Prepare { check, .. } => ctx.prepare(*check),
        Command::TrainSi { source: true, .. } => ctx.pretrain(),
        Command::TrainSi { .. } => ctx.train_si(),
        Command::TrainSiamese(_) => ctx.train_siamese(),
        Command::Adapt { .. } => ctx.adapt(),
        Command::Eval {
            baseline,
            checkpoint,
            ..
        } => ctx.eval(*baseline, checkpoint.as_deref()),
    }
}

struct Ctx {
    cfg: ExperimentConfig,
}

/// Stream ids for the per-stage generators derived from the run seed.
mod stream {
    pub const SOURCE_PREP: u64 = 10;
    pub const CHANNEL_PREP: u64 = 20;
    pub const TRAIN_SET: u64 = 30;
    pub const DEV_SPLIT: u64 = 31;
    pub const VAL_TRIALS: u64 = 32;
    pub const TEST_TRIALS: u64 = 33;
    pub const TRAIN_TRIALS: u64 = 34;
    pub const MODEL_INIT: u64 = 40;
    pub const PRETRAIN: u64 = 41;
    pub const SI: u64 = 42;
    pub const SIAMESE: u64 = 43;
    pub const ADAPT: u64 = 44;
}

impl Ctx {
    fn rng(&self, stream: u64) -> Rng {
        Rng::new(self.cfg.seed()).derive(stream)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn ch(&self) -> &str {
        &self.cfg.channel
    }

    fn subset_tag(&self) -> String {
        format!("f{}", self.cfg.fraction)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        textio::write_string(&self.path(name), contents)
    }

    fn read(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::invalid(format!(
                "missing artifact {}; run the upstream stage first",
                path.display()
            )));
        }
        textio::read_to_string(&path)
    }

    fn load_dataset(&self, name: &str, role: Role) -> Result<PreparedDataset> {
        let text = self.read(name)?;
        PreparedDataset::from_manifest(&text, role).map_err(|e| Error::in_file(self.path(name), e))
    }

    fn load_trials(&self, name: &str) -> Result<Vec<TrialPair>> {
        let text = self.read(name)?;
        parse_trials(&text).map_err(|e| Error::in_file(self.path(name), e))
    }

    fn load_checkpoint(&self, path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(Error::invalid(format!(
                "missing checkpoint {}",
                path.display()
            )));
        }
        let text = textio::read_to_string(path)?;
        Checkpoint::parse(&text).map_err(|e| Error::in_file(path, e))
    }

    fn pretrained(&self) -> Result<Checkpoint> {
        self.load_checkpoint(&self.path("pretrained.ckpt"))
    }

    fn checkpoint_name(&self, method: Method) -> String {
        format!("{}_{}_{}.ckpt", self.ch(), method, self.subset_tag())
    }

    fn train_subset_name(&self) -> String {
        format!("{}_train_{}.tsv", self.ch(), self.subset_tag())
    }

    fn generate(&self) -> Result<String> {
        let spec = &self.cfg.corpus;
        let root = Rng::new(spec.seed);
        let mut table = String::from(
            "channel\tset\tfiles_before\tfiles_after\tspeakers_before\tspeakers_after\thours_before\thours_after\tsegments\n",
        );
        let mut row = |ch: &str, set: &str, r: &PreprocessReport| {
            writeln!(
                table,
                "{ch}\t{set}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{}",
                r.files_before,
                r.files_after,
                r.speakers_before,
                r.speakers_after,
                r.hours_before,
                r.hours_after,
                r.segments_after
            )
            .expect("writing to String");
        };

        if spec.source_speakers > 0 {
            let src = generate_source(spec, &root)?;
            let (ds, report) = preprocess(
                &src.recordings,
                src.channel.noise_sigma,
                Role::Train,
                &src.channel.name,
                &mut root.derive(stream::SOURCE_PREP),
            )?;
            self.write("source.tsv", &ds.to_manifest())?;
            row("source", "train", &report);
        }
        for (ci, corpus) in generate_corpus(spec, &root)?.iter().enumerate() {
            let name = &corpus.channel.name;
            let (train_recs, dev_recs) = split_dev_recordings(spec, &corpus.recordings);
            let base = stream::CHANNEL_PREP + 1000 * ci as u64;
            for (set, recs, role, s) in [
                ("train", &train_recs, Role::Train, base),
                ("dev", &dev_recs, Role::DevValidation, base + 1),
            ] {
                let (ds, report) = preprocess(
                    recs,
                    corpus.channel.noise_sigma,
                    role,
                    name,
                    &mut root.derive(s),
                )?;
                self.write(&format!("{name}_{set}.tsv"), &ds.to_manifest())?;
                row(name, set, &report);
            }
        }
        self.write("generate_report.tsv", &table)?;
        Ok(table)
    }

    fn prepare(&self, check: bool) -> Result<String> {
        let ch = self.ch();
        let mut log = String::new();
        let pool = self.load_dataset(&format!("{ch}_train.tsv"), Role::Train)?;
        let dev = self.load_dataset(&format!("{ch}_dev.tsv"), Role::DevValidation)?;

        let target = self.cfg.train_segments.unwrap_or(pool.len());
        let train = build_training_set(&pool, target, &mut self.rng(stream::TRAIN_SET))?;
        if check {
            log.push_str(&prefix_check(&train)?);
        }
        let subset = select_subset(&train, self.cfg.fraction)?;
        let (val, test) = split_dev_speakers(&dev, &mut self.rng(stream::DEV_SPLIT))?;

        let n = self.cfg.n_pairs;
        let subset_name = self.train_subset_name();
        let trials = [
            (
                subset_name.replace(".tsv", "_trials.tsv"),
                &subset,
                stream::TRAIN_TRIALS,
            ),
            (format!("{ch}_val_trials.tsv"), &val, stream::VAL_TRIALS),
            (format!("{ch}_test_trials.tsv"), &test, stream::TEST_TRIALS),
        ];
        for (name, ds) in [
            (subset_name.clone(), &subset),
            (format!("{ch}_val.tsv"), &val),
            (format!("{ch}_test.tsv"), &test),
        ] {
            self.write(&name, &ds.to_manifest())?;
            writeln!(
                log,
                "{name}: speakers={} segments={}",
                ds.speakers().len(),
                ds.len()
            )
            .expect("writing to String");
        }
        for (name, ds, s) in trials {
            let pairs = generate_pairs(ds, n, &mut self.rng(s))
                .map_err(|e| Error::in_file(self.path(&name), e))?;
            let n_target = pairs.iter().filter(|p| p.target).count();
            self.write(&name, &trials_to_text(&pairs))?;
            writeln!(
                log,
                "{name}: target={n_target} nontarget={}",
                pairs.len() - n_target
            )
            .expect("writing to String");
        }
        Ok(log)
    }

    fn fresh_model(&self, feature_dim: usize) -> EmbeddingModel {
        EmbeddingModel::random(
            feature_dim,
            self.cfg.hidden_dim,
            self.cfg.embedding_dim,
            &mut self.rng(stream::MODEL_INIT),
        )
    }

    fn save_training(&self, name: &str, ckpt: &Checkpoint, history: &[EpochRecord]) -> Result<()> {
        self.write(name, &ckpt.to_text())?;
        let mut lines = String::new();
        for h in history {
            lines.push_str(&serde_json::to_string(h).expect("plain struct"));
            lines.push('\n');
        }
        self.write(&name.replace(".ckpt", "_history.jsonl"), &lines)
    }

    fn pretrain(&self) -> Result<String> {
        let src = self.load_dataset("source.tsv", Role::Train)?;
        let dim = src.feature_dim().ok_or(Error::Empty("source manifest"))?;
        let cfg = self
            .cfg
            .source
            .train_config(InitMode::FromScratch, self.rng(stream::PRETRAIN).next_u64());
        let out = pipeline::train_supervised(&self.fresh_model(dim), &src, &cfg)?;
        let summary = format!(
            "pretrained.ckpt: speakers={} best_epoch={} val_error={:?}\n",
            src.speakers().len(),
            out.best_epoch,
            out.best_val_error().unwrap_or(f64::NAN)
        );
        let ckpt = Checkpoint {
            model: out.model,
            classifier: Some(out.head),
            siamese: None,
        };
        self.save_training("pretrained.ckpt", &ckpt, &out.history)?;
        Ok(summary)
    }

    fn train_si(&self) -> Result<String> {
        let method = self.cfg.method;
        let init = match method {
            Method::FromScratch => InitMode::FromScratch,
            Method::SiFinetune => InitMode::FineTune,
            m => {
                return Err(Error::invalid(format!(
                    "train-si does not run method `{m}`"
                )))
            }
        };
        let data = self.load_dataset(&self.train_subset_name(), Role::Train)?;
        let dim = data
            .feature_dim()
            .ok_or(Error::Empty("training manifest"))?;
        let start = match init {
            InitMode::FromScratch => self.fresh_model(dim),
            InitMode::FineTune => self.pretrained()?.model,
        };
        let cfg = self
            .cfg
            .si
            .train_config(init, self.rng(stream::SI).next_u64());
        let out = pipeline::train_supervised(&start, &data, &cfg)?;
        let name = self.checkpoint_name(method);
        let summary = format!(
            "{name}: speakers={} best_epoch={} val_error={:?}\n",
            data.speakers().len(),
            out.best_epoch,
            out.best_val_error().unwrap_or(f64::NAN)
        );
        let ckpt = Checkpoint {
            model: out.model,
            classifier: Some(out.head),
            siamese: None,
        };
        self.save_training(&name, &ckpt, &out.history)?;
        Ok(summary)
    }

    fn train_siamese(&self) -> Result<String> {
        let ch = self.ch();
        let pre = self.pretrained()?;
        let subset_name = self.train_subset_name();
        let data = self.load_dataset(&subset_name, Role::Train)?;
        let pairs = self.load_trials(&subset_name.replace(".tsv", "_trials.tsv"))?;
        let val = self.load_dataset(&format!("{ch}_val.tsv"), Role::DevValidation)?;
        let val_pairs = self.load_trials(&format!("{ch}_val_trials.tsv"))?;
        let mut cfg = self.cfg.siamese.clone();
        cfg.seed = self.rng(stream::SIAMESE).next_u64();
        let out = train_siamese(
            &pre.model,
            &pipeline::pair_refs(&data, &pairs)?,
            &pipeline::pair_refs(&val, &val_pairs)?,
            &cfg,
        )?;
        let name = self.checkpoint_name(Method::SiameseFinetune);
        let ckpt = Checkpoint {
            model: out.model,
            classifier: None,
            siamese: Some(out.head),
        };
        self.save_training(&name, &ckpt, &out.history)?;
        let best = out.history[out.best_epoch].val_error;
        Ok(format!(
            "{name}: pairs={} best_epoch={} val_eer={:?}\n",
            pairs.len(),
            out.best_epoch,
            best.unwrap_or(f64::NAN)
        ))
    }

    fn adapt(&self) -> Result<String> {
        let pre = self.pretrained()?;
        let target = self.load_dataset(&self.train_subset_name(), Role::Train)?;
        let k = match self.cfg.k {
            Some(k) => k,
            None if target.segments.iter().all(|s| s.speaker_id.is_some()) => {
                target.speakers().len()
            }
            None => return Err(Error::invalid("target has no speaker labels; pass --k")),
        };
        let method = Method::from_technique(self.cfg.technique);
        let stem = self.checkpoint_name(method).replace(".ckpt", "");
        let seed = self.rng(stream::ADAPT).next_u64();
        let mut clustering = ClusterConfig::new(k, self.cfg.clustering, seed);
        clustering.n_init = self.cfg.cluster_n_init;
        clustering.max_iter = self.cfg.cluster_max_iter;
        let mut cfg = AdaptConfig::new(
            self.cfg.technique,
            clustering,
            self.cfg.adapt.train_config(InitMode::FineTune, seed),
            seed,
        );
        cfg.max_iterations = self.cfg.adapt_max_iterations;
        cfg.checkpoint_dir = Some(self.path(&stem));

        let report_name = format!("{stem}_report.jsonl");
        let out = match run_adapt_loop(&pre.model, &target.segments, &cfg) {
            Ok(out) => out,
            Err(e) => {
                self.write(&report_name, &e.partial.to_json_lines())?;
                return Err(e.error);
            }
        };
        self.write(&report_name, &out.report.to_json_lines())?;
        let ckpt = Checkpoint {
            model: out.model,
            classifier: Some(out.head),
            siamese: None,
        };
        self.write(&format!("{stem}.ckpt"), &ckpt.to_text())?;
        let mut log = String::new();
        for r in &out.report.records {
            writeln!(
                log,
                "iteration={} validation_error={:?} purity={}",
                r.iteration,
                r.validation_error,
                r.purity.map_or("-".into(), |p| format!("{p:?}"))
            )
            .expect("writing to String");
        }
        writeln!(
            log,
            "stop_reason={:?} best_iteration={}",
            out.report.stop_reason.expect("set on success"),
            out.report.best_iteration
        )
        .expect("writing to String");
        Ok(log)
    }

    fn eval(&self, baseline: bool, checkpoint: Option<&Path>) -> Result<String> {
        let ch = self.ch();
        let (path, tag) = match (checkpoint, baseline) {
            (Some(p), _) => {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned());
                (p.to_path_buf(), stem.unwrap_or_else(|| "checkpoint".into()))
            }
            (None, true) => (self.path("pretrained.ckpt"), "baseline".into()),
            (None, false) => {
                let name = self.checkpoint_name(self.cfg.method);
                (
                    self.path(&name),
                    format!("{}_{}", self.cfg.method, self.subset_tag()),
                )
            }
        };
        let ckpt = self.load_checkpoint(&path)?;
        let backend = self.cfg.backend;
        if backend == Backend::Siamese && ckpt.siamese.is_none() {
            return Err(Error::invalid(format!(
                "{} has no Siamese head; use --backend cosine",
                path.display()
            )));
        }
        let test = self.load_dataset(&format!("{ch}_test.tsv"), Role::DevTest)?;
        let pairs = self.load_trials(&format!("{ch}_test_trials.tsv"))?;
        let (scored, eer) =
            pipeline::verification_eer(&ckpt.model, ckpt.siamese.as_ref(), &test, &pairs, backend)?;
        self.write(
            &format!("{ch}_{tag}_{backend}_scores.tsv"),
            &scores_to_text(&scored),
        )?;
        let line = format!("{eer}\n");
        self.write(&format!("{ch}_{tag}_{backend}_eer.txt"), &line)?;
        Ok(line)
    }
}

/// Checks that every supported fraction's speaker set contains the next
/// smaller one.
fn prefix_check(train: &PreparedDataset) -> Result<String> {
    let mut prev: Option<(f64, BTreeSet<String>)> = None;
    let mut log = String::new();
    for &f in SUPPORTED_FRACTIONS.iter() {
        let sub = select_subset(train, f)?;
        let speakers: BTreeSet<String> = sub.speakers().into_iter().map(String::from).collect();
        if let Some((pf, p)) = &prev {
            if !p.is_subset(&speakers) {
                return Err(Error::invalid(format!(
                    "prefix property violated: fraction {pf} is not contained in {f}"
                )));
            }
        }
        writeln!(
            log,
            "fraction {f}: speakers={} segments={}",
            speakers.len(),
            sub.len()
        )
        .expect("writing to String");
        prev = Some((f, speakers));
    }
    log.push_str("prefix check passed\n");
    Ok(log)
}
