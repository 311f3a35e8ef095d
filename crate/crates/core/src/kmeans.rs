//! Seeded Lloyd's k-means with k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid after each assignment step.
    pub objective_history: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }

    /// Member indices of each cluster, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `points` into `min(k, points.len())` groups.
pub fn kmeans(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::invalid("k-means needs at least one point"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("k-means points have inconsistent dimensions"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means points must be finite"));
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut objective_history = Vec::new();

    for _ in 0..cfg.max_iters {
        objective_history.push(assign(points, &centroids, &mut assignments));
        let updated = update(points, &centroids, &assignments);
        let movement: f64 = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .sum();
        centroids = updated;
        if movement < cfg.tol {
            break;
        }
    }
    objective_history.push(assign(points, &centroids, &mut assignments));

    Ok(KMeansResult {
        assignments,
        centroids,
        objective_history,
    })
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every point coincides with a centroid already.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (w, p) in nearest.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Nearest-centroid assignment (ties to the lower index); returns the objective.
fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &mut [usize]) -> f64 {
    let mut objective = 0.0;
    for (p, slot) in points.iter().zip(assignments.iter_mut()) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *slot = best;
        objective += best_d;
    }
    objective
}

/// Cluster means; empty clusters move onto the point farthest from its own new centroid.
fn update(points: &[Vec<f64>], old: &[Vec<f64>], assignments: &[usize]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; old.len()];
    let mut counts = vec![0usize; old.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &c), o)| {
            if c == 0 {
                o.clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect();

    let mut used = Vec::new();
    for c in 0..centroids.len() {
        if counts[c] != 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, (p, &a)) in points.iter().zip(assignments).enumerate() {
            if used.contains(&i) {
                continue;
            }
            let d = sq_dist(p, &centroids[a]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        if let Some(i) = far {
            used.push(i);
            centroids[c] = points[i].clone();
        }
    }
    centroids
}
