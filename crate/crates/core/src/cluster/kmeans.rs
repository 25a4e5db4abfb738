use std::collections::HashSet;

use super::{check_items, ClusterAssignment, ClusterConfig, ClusterMethod};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Trace of a single seeded Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step, final assignment included.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, each further centre drawn with
/// probability proportional to squared distance from the nearest chosen one.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.index(points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` past the last positive weight
            chosen.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).unwrap())
        } else {
            rng.index(points.len())
        };
        let c = points[pick].clone();
        for (dd, p) in d2.iter_mut().zip(points) {
            *dd = dd.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (c, d) = nearest(p, centroids);
        *l = c;
        inertia += d;
    }
    inertia
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let l = labels[i];
            if sizes[l] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[l]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("n >= k guarantees a donor cluster");
        sizes[labels[i]] -= 1;
        labels[i] = empty;
        sizes[empty] = 1;
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        let n = n as f64;
        s.iter_mut().for_each(|v| *v /= n);
    }
    sums
}

fn lloyd(points: &[Vec<f64>], cfg: &ClusterConfig, rng: &mut Rng) -> KMeansRun {
    let (k, dim) = (cfg.k, points[0].len());
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        history.push(assign(points, &centroids, &mut labels));
        repair_empty(points, &centroids, &mut labels, k);
        let next = means(points, &labels, k, dim);
        let shift: f64 = next
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b))
            .sum();
        centroids = next;
        if shift <= cfg.tol {
            break;
        }
    }
    let mut inertia = assign(points, &centroids, &mut labels);
    history.push(inertia);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if sizes.contains(&0) {
        repair_empty(points, &centroids, &mut labels, k);
        centroids = means(points, &labels, k, dim);
        inertia = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum();
        history.push(inertia);
    }
    KMeansRun {
        labels,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    }
}

/// Best-of-`n_init` k-means over L2-normalized items, plus every run's trace.
pub fn kmeans_detailed(
    items: &[Embedding],
    cfg: &ClusterConfig,
) -> Result<(ClusterAssignment, Vec<KMeansRun>)> {
    cfg.validate()?;
    check_items(items, cfg.k)?;
    let points: Vec<Vec<f64>> = items
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.normalized()
                .map(Embedding::into_vec)
                .map_err(|_| Error::ZeroNorm(Some(format!("clustering item {i}"))))
        })
        .collect::<Result<_>>()?;
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < cfg.k {
        return Err(Error::Infeasible(format!(
            "only {} distinct points after normalization, need at least k = {}",
            distinct.len(),
            cfg.k
        )));
    }
    let root = Rng::new(cfg.seed);
    let runs: Vec<KMeansRun> = (0..cfg.n_init)
        .map(|r| lloyd(&points, cfg, &mut root.derive(r as u64)))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.inertia.total_cmp(&b.1.inertia).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("n_init >= 1");
    let assignment = ClusterAssignment {
        labels: runs[best].labels.clone(),
        k: cfg.k,
        inertia: Some(runs[best].inertia),
    };
    Ok((assignment, runs))
}

pub fn kmeans(items: &[Embedding], cfg: &ClusterConfig) -> Result<ClusterAssignment> {
    if cfg.method != ClusterMethod::KMeans {
        return Err(Error::invalid("kmeans called with a non-KMeans config"));
    }
    kmeans_detailed(items, cfg).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn cfg(k: usize, seed: u64) -> ClusterConfig {
        ClusterConfig::new(k, ClusterMethod::KMeans, seed)
    }

    #[test]
    fn two_clouds_recovered() {
        let mut rng = Rng::new(0);
        let mut items = Vec::new();
        for _ in 0..20 {
            items.push(emb(&[
                rng.gaussian(0.0, 0.01),
                1.0 + rng.gaussian(0.0, 0.01),
            ]));
            items.push(emb(&[
                10.0 + rng.gaussian(0.0, 0.01),
                10.0 + rng.gaussian(0.0, 0.01),
            ]));
        }
        let a = kmeans(&items, &cfg(2, 1)).unwrap();
        for i in 0..40 {
            assert_eq!(a.labels[i], a.labels[i % 2]);
        }
        assert_ne!(a.labels[0], a.labels[1]);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let items: Vec<Embedding> = (0..6)
            .map(|i| emb(&[(i as f64).cos(), (i as f64).sin()]))
            .collect();
        let a = kmeans(&items, &cfg(6, 3)).unwrap();
        assert_eq!(a.inertia, Some(0.0));
        let mut l = a.labels.clone();
        l.sort();
        assert_eq!(l, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        let items = vec![emb(&[1.0, 0.0]), emb(&[2.0, 0.0]), emb(&[0.0, 1.0])];
        assert!(matches!(
            kmeans(&items[..1], &cfg(2, 0)),
            Err(Error::Infeasible(_))
        ));
        // (1,0) and (2,0) collapse to one point after normalization
        let err = kmeans(&items, &cfg(3, 0)).unwrap_err();
        assert!(err.to_string().contains("distinct"), "{err}");
        assert!(kmeans(&[emb(&[0.0, 0.0]), emb(&[1.0, 0.0])], &cfg(2, 0)).is_err());
        assert!(kmeans(&items, &cfg(1, 0)).is_err());
    }

    #[test]
    fn runs_are_monotone_and_best_is_minimal() {
        let mut rng = Rng::new(5);
        let items: Vec<Embedding> = (0..80)
            .map(|_| emb(&(0..4).map(|_| rng.normal()).collect::<Vec<_>>()))
            .collect();
        let (a, runs) = kmeans_detailed(&items, &cfg(5, 9)).unwrap();
        assert_eq!(runs.len(), 10);
        for r in &runs {
            assert!(
                r.inertia_history.windows(2).all(|w| w[1] <= w[0]),
                "{:?}",
                r.inertia_history
            );
            assert!(a.inertia.unwrap() <= r.inertia);
        }
        let mut seen = [false; 5];
        a.labels.iter().for_each(|&l| seen[l] = true);
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn empty_cluster_repair_keeps_all_ids() {
        let points = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let centroids = vec![vec![0.0, 1.0], vec![5.0, 5.0], vec![1.0, 0.0]];
        let mut labels = vec![0, 0, 2];
        repair_empty(&points, &centroids, &mut labels, 3);
        let mut l = labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }
}
