use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_k, cluster_means, ClusterResult, DistillError};
use crate::linalg::{squared_distance, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansConfig {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            restarts: 8,
        }
    }
}

/// Nearest centroid per point (ties → lowest index) and the total inertia.
fn assign(points: &Matrix, centroids: &Matrix, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (row, label) in points.row_iter().zip(labels.iter_mut()) {
        let mut best = (f64::INFINITY, 0);
        for (c, centroid) in centroids.row_iter().enumerate() {
            let d = squared_distance(row, centroid);
            if d < best.0 {
                best = (d, c);
            }
        }
        *label = best.1;
        inertia += best.0;
    }
    inertia
}

fn plus_plus_seed(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points.row_iter().map(|r| squared_distance(r, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on an already chosen point
            if dist[pick] == 0.0 {
                pick = dist.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn lloyd(points: &Matrix, k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> (Matrix, Vec<usize>, Vec<f64>) {
    let n = points.rows();
    let mut centroids = plus_plus_seed(points, k, rng);
    let mut labels = vec![0; n];
    let mut trace = vec![assign(points, &centroids, &mut labels)];
    for _ in 0..max_iters {
        let mut next = cluster_means(points, &labels, k);
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                // reseed at the point farthest from its current centroid
                let mut far = (f64::NEG_INFINITY, 0);
                for (i, row) in points.row_iter().enumerate() {
                    let d = squared_distance(row, centroids.row(labels[i]));
                    if d > far.0 {
                        far = (d, i);
                    }
                }
                next.row_mut(c).copy_from_slice(points.row(far.1));
            }
        }
        centroids = next;
        let before = labels.clone();
        trace.push(assign(points, &centroids, &mut labels));
        if labels == before {
            break;
        }
    }
    (centroids, labels, trace)
}

/// Lloyd's algorithm from k-means++ seeds, best of `config.restarts`.
///
/// Restart `i` draws from stream `i` of a generator seeded with `seed`;
/// the lowest inertia wins, ties going to the earlier restart.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, config: &KmeansConfig) -> Result<ClusterResult, DistillError> {
    check_k(k, points.rows())?;
    let mut best: Option<ClusterResult> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let (centroids, assignments, inertia_trace) = lloyd(points, k, config.max_iters, &mut rng);
        let inertia = *inertia_trace.last().expect("at least one assignment");
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(ClusterResult {
                centroids,
                assignments,
                inertia,
                inertia_trace,
                restart,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}
