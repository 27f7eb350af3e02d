use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::embed::EmbeddingVector;
use crate::par::Exec;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the relative inertia change falls below this.
    pub tol: f64,
    pub exec: Exec,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, tol: 1e-4, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster index per input vector.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then D²-weighted draws.
fn plus_plus(points: &[&[f64]], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if t < w {
                        break;
                    }
                    t -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Only duplicates of chosen centres remain.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].to_vec());
        let c = centroids.last().expect("just pushed");
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, c));
        }
    }
    centroids
}

fn lloyd(points: &[&[f64]], k: usize, cfg: &KMeansConfig, rng: &mut impl Rng) -> (ClusterAssignment, Vec<f64>) {
    let dim = points[0].len();
    let mut centroids = plus_plus(points, k, rng);
    let mut trace: Vec<f64> = Vec::new();
    let mut assignment = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignment[i] = j;
            dists[i] = d;
            inertia += d;
        }
        iterations += 1;
        let converged = match trace.last() {
            Some(&prev) => prev == 0.0 || ((prev - inertia) / prev).abs() < cfg.tol,
            None => inertia == 0.0,
        };
        trace.push(inertia);
        if converged || iterations >= cfg.max_iter {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        // An empty cluster takes over the point farthest from its centre.
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len()).max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a))).unwrap();
                centroids[j] = points[far].to_vec();
                dists[far] = 0.0;
            }
        }
    }
    let inertia = *trace.last().expect("at least one iteration");
    (ClusterAssignment { assignment, centroids, inertia, iterations }, trace)
}

fn validate(vectors: &[EmbeddingVector], k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if k > vectors.len() {
        return Err(EvalError::KTooLarge { k, n: vectors.len() });
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(EvalError::DimMismatch { expected: dim, got: v.dim() });
    }
    Ok(())
}

/// Best-of-`restarts` Lloyd clustering plus each restart's inertia trace.
pub fn kmeans_traced(
    vectors: &[EmbeddingVector],
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<(ClusterAssignment, Vec<Vec<f64>>), EvalError> {
    validate(vectors, k)?;
    let points: Vec<&[f64]> = vectors.iter().map(EmbeddingVector::as_slice).collect();
    let runs = cfg.exec.map_range(cfg.restarts.max(1), |r| {
        let mut rng = seed::rng(seed, "kmeans", &[r as u64]);
        lloyd(&points, k, cfg, &mut rng)
    });
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.inertia.total_cmp(&b.1 .0.inertia).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let traces = runs.iter().map(|(_, t)| t.clone()).collect();
    Ok((runs.into_iter().nth(best).expect("index in range").0, traces))
}

/// k-means++ initialisation and Lloyd iterations, lowest inertia over
/// restarts with per-restart sub-seeds.
pub fn kmeans(vectors: &[EmbeddingVector], k: usize, seed: u64, cfg: &KMeansConfig) -> Result<ClusterAssignment, EvalError> {
    kmeans_traced(vectors, k, seed, cfg).map(|(a, _)| a)
}
