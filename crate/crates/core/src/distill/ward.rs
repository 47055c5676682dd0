use super::{check_k, DistillError};
use crate::linalg::{squared_distance, Matrix};

/// Ward-linkage agglomerative clustering cut at `k` clusters.
///
/// Repeatedly merges the pair of clusters whose union increases the total
/// within-cluster sum of squares the least, `n_a·n_b/(n_a+n_b)·‖c_a − c_b‖²`.
/// Ties merge the lexicographically smallest pair. Labels are numbered by
/// each cluster's lowest row index.
pub fn ward(points: &Matrix, k: usize) -> Result<Vec<usize>, DistillError> {
    let n = points.rows();
    check_k(k, n)?;
    let mut sizes = vec![1usize; n];
    let mut centers: Vec<Vec<f64>> = points.row_iter().map(<[f64]>::to_vec).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive = vec![true; n];
    let cost = |sa: usize, ca: &[f64], sb: usize, cb: &[f64]| {
        (sa * sb) as f64 / (sa + sb) as f64 * squared_distance(ca, cb)
    };
    let mut dist = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            dist[i * n + j] = cost(1, &centers[i], 1, &centers[j]);
        }
    }
    for _ in 0..(n - k) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in (0..n).filter(|&i| alive[i]) {
            for j in ((i + 1)..n).filter(|&j| alive[j]) {
                if dist[i * n + j] < best.0 {
                    best = (dist[i * n + j], i, j);
                }
            }
        }
        let (_, a, b) = best;
        let total = sizes[a] + sizes[b];
        let merged: Vec<f64> = centers[a]
            .iter()
            .zip(&centers[b])
            .map(|(x, y)| (x * sizes[a] as f64 + y * sizes[b] as f64) / total as f64)
            .collect();
        centers[a] = merged;
        sizes[a] = total;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        alive[b] = false;
        for c in (0..n).filter(|&c| alive[c] && c != a) {
            let (lo, hi) = if c < a { (c, a) } else { (a, c) };
            dist[lo * n + hi] = cost(sizes[a], &centers[a], sizes[c], &centers[c]);
        }
    }
    let mut clusters: Vec<&Vec<usize>> = (0..n).filter(|&i| alive[i]).map(|i| &members[i]).collect();
    clusters.sort_by_key(|m| m.iter().min().copied());
    let mut labels = vec![0; n];
    for (label, m) in clusters.iter().enumerate() {
        for &i in m.iter() {
            labels[i] = label;
        }
    }
    Ok(labels)
}
