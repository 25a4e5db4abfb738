use super::{check_items, ClusterAssignment};
use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};

/// One agglomeration step. Clusters are named by their smallest member
/// index; `kept < absorbed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub kept: usize,
    pub absorbed: usize,
    /// Average pairwise cosine distance between the two clusters.
    pub distance: f64,
    pub size: usize,
}

/// Upper-triangle distance storage.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Average-linkage agglomerative clustering under cosine distance, stopped
/// at `k` clusters. Final labels number clusters by smallest member index.
pub fn ahc(items: &[Embedding], k: usize) -> Result<ClusterAssignment> {
    ahc_with_merges(items, k).map(|r| r.0)
}

pub fn ahc_with_merges(items: &[Embedding], k: usize) -> Result<(ClusterAssignment, Vec<Merge>)> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    check_items(items, k)?;
    let n = items.len();
    let unit: Vec<Vec<f64>> = items
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.normalized()
                .map(Embedding::into_vec)
                .map_err(|_| Error::ZeroNorm(Some(format!("clustering item {i}"))))
        })
        .collect::<Result<_>>()?;

    let mut dist = Condensed {
        n,
        d: vec![0.0; n * n.saturating_sub(1) / 2],
    };
    for i in 0..n {
        for j in i + 1..n {
            dist.set(i, j, 1.0 - dot(&unit[i], &unit[j]).clamp(-1.0, 1.0));
        }
    }

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    // nearest active partner above each row: (distance, column)
    let mut nn: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n];
    let recompute = |row: usize, active: &[bool], dist: &Condensed| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for col in row + 1..n {
            if active[col] {
                let d = dist.get(row, col);
                if d < best.0 {
                    best = (d, col);
                }
            }
        }
        best
    };
    for (i, slot) in nn.iter_mut().enumerate() {
        *slot = recompute(i, &active, &dist);
    }

    let mut merges = Vec::with_capacity(n - k);
    let mut clusters = n;
    while clusters > k {
        let mut a = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if active[i] && nn[i].1 != usize::MAX && nn[i].0 < best {
                best = nn[i].0;
                a = i;
            }
        }
        let b = nn[a].1;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        active[b] = false;
        for c in 0..n {
            if active[c] && c != a {
                let merged = (na * dist.get(a, c) + nb * dist.get(b, c)) / (na + nb);
                dist.set(a, c, merged);
            }
        }
        size[a] += size[b];
        merges.push(Merge {
            kept: a,
            absorbed: b,
            distance: best,
            size: size[a],
        });
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        clusters -= 1;

        nn[a] = recompute(a, &active, &dist);
        for c in 0..a {
            if !active[c] {
                continue;
            }
            if nn[c].1 == a || nn[c].1 == b {
                nn[c] = recompute(c, &active, &dist);
            } else {
                let d = dist.get(c, a);
                if d < nn[c].0 || (d == nn[c].0 && a < nn[c].1) {
                    nn[c] = (d, a);
                }
            }
        }
        for c in a + 1..b {
            if active[c] && nn[c].1 == b {
                nn[c] = recompute(c, &active, &dist);
            }
        }
    }

    let mut rank = vec![usize::MAX; n];
    let mut next = 0;
    for (i, r) in rank.iter_mut().enumerate() {
        if active[i] {
            *r = next;
            next += 1;
        }
    }
    let labels = owner.iter().map(|&o| rank[o]).collect();
    Ok((
        ClusterAssignment {
            labels,
            k,
            inertia: None,
        },
        merges,
    ))
}
