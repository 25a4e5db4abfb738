//! Trial scoring and equal-error-rate computation.

use std::fmt;
use std::fmt::Write as _;

use crate::data::{SegmentIndex, TrialPair};
use crate::embedding::cosine_similarity;
use crate::error::{Error, Result};
use crate::model::{siamese_forward, EmbeddingModel, SiameseHead};
use crate::textio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Cosine,
    Siamese,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Backend::Cosine),
            "siamese" => Ok(Backend::Siamese),
            _ => Err(Error::invalid(format!("unknown backend `{s}`"))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Cosine => "cosine",
            Backend::Siamese => "siamese",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub pair: TrialPair,
    pub score: f64,
    pub backend: Backend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    /// Score at which FAR and FRR cross.
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl fmt::Display for EerResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eer={:?} threshold={:?} n_target={} n_nontarget={}",
            self.eer, self.threshold, self.n_target, self.n_nontarget
        )
    }
}

/// Scores every pair in order. The Siamese backend requires `head`.
pub fn score_trials(
    model: &EmbeddingModel,
    head: Option<&SiameseHead>,
    segments: &SegmentIndex<'_>,
    pairs: &[TrialPair],
    backend: Backend,
) -> Result<Vec<ScoredTrial>> {
    let head = match (backend, head) {
        (Backend::Siamese, None) => {
            return Err(Error::invalid("Siamese scoring requires a Siamese head"))
        }
        (_, h) => h,
    };
    pairs
        .iter()
        .map(|p| {
            let a = model.embed(&segments.get(&p.seg_a)?.features)?;
            let b = model.embed(&segments.get(&p.seg_b)?.features)?;
            let score = match backend {
                Backend::Cosine => cosine_similarity(&a, &b)?,
                Backend::Siamese => siamese_forward(head.expect("checked above"), &a, &b)?,
            };
            Ok(ScoredTrial {
                pair: p.clone(),
                score,
                backend,
            })
        })
        .collect()
}

pub fn compute_eer(scored: &[ScoredTrial]) -> Result<EerResult> {
    let labeled: Vec<(f64, bool)> = scored.iter().map(|s| (s.score, s.pair.target)).collect();
    eer_from_labeled_scores(&labeled)
}

/// EER over `(score, is_target)` pairs.
///
/// A trial is accepted when its score is `>= t`. FAR(t) is the fraction of
/// non-target scores `>= t`, FRR(t) the fraction of target scores `< t`.
/// Both are evaluated at every distinct score and above the maximum; the
/// first sign change of `FAR - FRR` is located and both curves are linearly
/// interpolated between the bracketing thresholds.
pub fn eer_from_labeled_scores(scores: &[(f64, bool)]) -> Result<EerResult> {
    let n_target = scores.iter().filter(|s| s.1).count();
    let n_nontarget = scores.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::invalid(format!(
            "EER needs both classes, got {n_target} target and {n_nontarget} non-target trials"
        )));
    }
    if let Some((s, _)) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {s}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (nt, nn) = (n_target as f64, n_nontarget as f64);
    // At the lowest score everything is accepted.
    let mut targets_below = 0usize;
    let mut nontargets_below = 0usize;
    let mut prev = (sorted[0].0, 1.0, 0.0);
    let mut i = 0;
    loop {
        let (t, far, frr) = if i < sorted.len() {
            let t = sorted[i].0;
            (
                t,
                1.0 - nontargets_below as f64 / nn,
                targets_below as f64 / nt,
            )
        } else {
            (f64::INFINITY, 0.0, 1.0)
        };
        let d = far - frr;
        if d <= 0.0 {
            let d_prev = prev.1 - prev.2;
            if d == 0.0 {
                return Ok(EerResult {
                    eer: far,
                    threshold: t,
                    n_target,
                    n_nontarget,
                });
            }
            let alpha = d_prev / (d_prev - d);
            let eer = prev.1 + alpha * (far - prev.1);
            let threshold = if t.is_finite() {
                prev.0 + alpha * (t - prev.0)
            } else {
                prev.0
            };
            return Ok(EerResult {
                eer,
                threshold,
                n_target,
                n_nontarget,
            });
        }
        prev = (t, far, frr);
        // advance past every score equal to t
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
        if t.is_infinite() {
            unreachable!("FAR - FRR is -1 above every score");
        }
    }
}

/// `<seg_a>\t<seg_b>\t<label>\t<score>` per trial.
pub fn scores_to_text(scored: &[ScoredTrial]) -> String {
    let mut out = String::new();
    for s in scored {
        write!(
            out,
            "{}\t{}\t{}\t",
            s.pair.seg_a,
            s.pair.seg_b,
            u8::from(s.pair.target)
        )
        .unwrap();
        textio::push_floats(&mut out, &[s.score], ' ');
        out.push('\n');
    }
    out
}

pub fn parse_scores(text: &str, backend: Backend) -> Result<Vec<ScoredTrial>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                lineno,
                "expected `<a>\\t<b>\\t<label>\\t<score>`",
            ));
        }
        let pair = crate::data::parse_trials(&cols[..3].join("\t"))
            .map_err(|e| match e {
                Error::Parse { msg, .. } => Error::parse(lineno, msg),
                other => other,
            })?
            .pop()
            .ok_or_else(|| Error::parse(lineno, "missing trial"))?;
        let score = textio::parse_f64(cols[3], lineno)?;
        out.push(ScoredTrial {
            pair,
            score,
            backend,
        });
    }
    Ok(out)
}
