//! Embedding vectors and the vector math every other module builds on.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::textio;

/// Fixed-dimension real vector. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Fails if any entry is NaN or infinite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite embedding entry at {i}")));
        }
        Ok(Embedding(values))
    }

    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// Unit-length copy. Errors on a zero vector.
    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm(None));
        }
        Ok(Embedding(self.0.iter().map(|v| v / n).collect()))
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1]. Zero vectors are an error.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm(Some("cosine similarity".into())));
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Elementwise arithmetic mean of a nonempty list of equal-dimension vectors.
pub fn mean_embedding<E: AsRef<[f64]>>(items: &[E]) -> Result<Embedding> {
    let first = items.first().ok_or(Error::Empty("mean_embedding"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0; dim];
    for item in items {
        let v = item.as_ref();
        check_dims(dim, v.len())?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = items.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Embedding::new(acc)
}

/// A named collection of embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub items: Vec<(String, Embedding)>,
}

impl EmbeddingSet {
    /// Serializes as `dim=<D>` followed by `<id> <v1> ... <vD>` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dim={}", self.dim).unwrap();
        for (id, e) in &self.items {
            out.push_str(id);
            out.push(' ');
            textio::push_floats(&mut out, e.as_slice(), ' ');
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(Error::parse(1, "missing `dim=` header"))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::parse(1, format!("bad header `{header}`")))?;
        let mut items = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let id = toks.next().unwrap();
            if !seen.insert(id.to_string()) {
                return Err(Error::parse(lineno, format!("duplicate id `{id}`")));
            }
            let values = textio::parse_floats(toks, lineno)?;
            if values.len() != dim {
                return Err(Error::parse(
                    lineno,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            items.push((id.to_string(), Embedding::from_finite(values)));
        }
        Ok(EmbeddingSet { dim, items })
    }
}
