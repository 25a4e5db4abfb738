//! K-means++ / Lloyd and average-linkage cosine AHC over embeddings.

mod ahc;
mod kmeans;

pub use ahc::{ahc, ahc_with_merges, Merge};
pub use kmeans::{kmeans, kmeans_detailed, KMeansRun};

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::textio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMethod {
    KMeans,
    Ahc,
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterMethod::KMeans),
            "ahc" => Ok(ClusterMethod::Ahc),
            _ => Err(Error::invalid(format!("unknown clustering method `{s}`"))),
        }
    }
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterMethod::KMeans => "kmeans",
            ClusterMethod::Ahc => "ahc",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub method: ClusterMethod,
    pub n_init: usize,
    pub max_iter: usize,
    /// Lloyd stops once the summed squared centroid shift falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl ClusterConfig {
    /// `n_init = 10`, `max_iter = 300`, `tol = 1e-6`.
    pub fn new(k: usize, method: ClusterMethod, seed: u64) -> Self {
        ClusterConfig {
            k,
            method,
            n_init: 10,
            max_iter: 300,
            tol: 1e-6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("k must be >= 2, got {}", self.k)));
        }
        if self.n_init == 0 || self.max_iter == 0 {
            return Err(Error::invalid("n_init and max_iter must be >= 1"));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::invalid("tol must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    /// Within-cluster sum of squares; k-means only.
    pub inertia: Option<f64>,
}

impl ClusterAssignment {
    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    /// Item indices per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Canonical form: clusters renumbered by first appearance.
    pub fn canonical_labels(&self) -> Vec<usize> {
        let mut map = HashMap::new();
        self.labels
            .iter()
            .map(|c| {
                let next = map.len();
                *map.entry(*c).or_insert(next)
            })
            .collect()
    }

    /// `<item_id>\t<cluster_id>` lines, plus `# inertia=<v>` for k-means.
    pub fn to_text(&self, ids: &[String]) -> Result<String> {
        if ids.len() != self.labels.len() {
            return Err(Error::DimMismatch {
                expected: self.labels.len(),
                got: ids.len(),
            });
        }
        let mut out = String::new();
        for (id, c) in ids.iter().zip(&self.labels) {
            writeln!(out, "{id}\t{c}").unwrap();
        }
        if let Some(v) = self.inertia {
            out.push_str("# inertia=");
            textio::push_floats(&mut out, &[v], ' ');
            out.push('\n');
        }
        Ok(out)
    }

    /// Inverse of [`ClusterAssignment::to_text`]. `k` is taken as one more
    /// than the largest cluster id, and every id below it must occur.
    pub fn parse(text: &str) -> Result<(Vec<String>, ClusterAssignment)> {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut inertia = None;
        let mut seen = std::collections::HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let v = rest
                    .trim()
                    .strip_prefix("inertia=")
                    .ok_or_else(|| Error::parse(lineno, "unknown comment line"))?;
                if inertia.is_some() {
                    return Err(Error::parse(lineno, "duplicate inertia line"));
                }
                inertia = Some(textio::parse_f64(v, lineno)?);
                continue;
            }
            let (id, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(lineno, "expected `<item_id>\\t<cluster_id>`"))?;
            textio::check_id(id, lineno, "item id")?;
            if !seen.insert(id.to_string()) {
                return Err(Error::parse(lineno, format!("duplicate item `{id}`")));
            }
            let c: usize = c
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad cluster id `{c}`")))?;
            ids.push(id.to_string());
            labels.push(c);
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        if k > labels.len() {
            return Err(Error::parse(
                0,
                format!("{k} clusters but only {} items", labels.len()),
            ));
        }
        let mut present = vec![false; k];
        for &c in &labels {
            present[c] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::parse(0, format!("cluster {missing} has no members")));
        }
        Ok((ids, ClusterAssignment { labels, k, inertia }))
    }
}

/// Dispatches on `cfg.method`.
pub fn cluster(items: &[Embedding], cfg: &ClusterConfig) -> Result<ClusterAssignment> {
    match cfg.method {
        ClusterMethod::KMeans => kmeans(items, cfg),
        ClusterMethod::Ahc => {
            cfg.validate()?;
            ahc(items, cfg.k)
        }
    }
}

/// `(1/N) * sum over clusters of the largest single-speaker count`.
pub fn purity<S: AsRef<str>>(assignment: &ClusterAssignment, truth: &[S]) -> Result<f64> {
    if truth.len() != assignment.n_items() {
        return Err(Error::DimMismatch {
            expected: assignment.n_items(),
            got: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("purity"));
    }
    let mut total = 0usize;
    for members in assignment.members() {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for i in members {
            *counts.entry(truth[i].as_ref()).or_default() += 1;
        }
        total += counts.values().copied().max().unwrap_or(0);
    }
    Ok(total as f64 / truth.len() as f64)
}

pub(crate) fn check_items(items: &[Embedding], k: usize) -> Result<usize> {
    let first = items.first().ok_or(Error::Empty("clustering input"))?;
    let dim = first.dim();
    if let Some(bad) = items.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    if items.len() < k {
        return Err(Error::Infeasible(format!(
            "{} items cannot form {k} clusters",
            items.len()
        )));
    }
    Ok(dim)
}
