//! Distilling Rosetta anchor pairs from a trained model's mean embeddings.

mod gmm;
mod io;
mod kmeans;
mod ward;

pub use gmm::{gmm, GmmResult, GMM_ITERATIONS};
pub use io::{load_rosetta, read_rosetta, save_rosetta, write_rosetta};
pub use kmeans::{kmeans, KmeansConfig};
pub use ward::ward;

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{squared_distance, Matrix};
use crate::vae::{ModelState, RosettaSet, VaeError};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("cannot form {k} clusters from {rows} rows")]
    InvalidK { k: usize, rows: usize },
    #[error("{0}")]
    Mismatch(String),
    #[error("unknown selector `{0}`")]
    UnknownSelector(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Latent means of a model over the rows of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    /// Dataset row of each table row.
    pub indices: Vec<usize>,
    /// One latent mean per table row.
    pub means: Matrix,
    pub source_digest: String,
}

impl EmbeddingTable {
    pub fn new(indices: Vec<usize>, means: Matrix, source_digest: impl Into<String>) -> Result<Self, DistillError> {
        if indices.len() != means.rows() {
            return Err(DistillError::Mismatch(format!(
                "{} indices for {} embeddings",
                indices.len(),
                means.rows()
            )));
        }
        Ok(Self {
            indices,
            means,
            source_digest: source_digest.into(),
        })
    }

    /// Posterior means of `model` for every row of `inputs`.
    pub fn from_model(model: &ModelState, inputs: &Matrix) -> Result<Self, DistillError> {
        let means = model.encode_means(inputs)?;
        Self::new((0..inputs.rows()).collect(), means, model.digest())
    }

    pub fn len(&self) -> usize {
        self.means.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.means.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Table rows at `rows`.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            indices: rows.iter().map(|&r| self.indices[r]).collect(),
            means: self.means.select_rows(rows),
            source_digest: self.source_digest.clone(),
        }
    }
}

/// Partition of the rows of an [`EmbeddingTable`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// `Σ ‖z_i − centroid(assignment_i)‖²`.
    pub inertia: f64,
    /// Inertia after each assignment step of the winning run.
    pub inertia_trace: Vec<f64>,
    /// Restart that produced this result.
    pub restart: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Kmeans,
    Agglomerative,
    Gmm,
    Random,
}

impl Selector {
    pub const ALL: [Selector; 4] = [Selector::Kmeans, Selector::Agglomerative, Selector::Gmm, Selector::Random];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Kmeans => "kmeans",
            Selector::Agglomerative => "agglomerative",
            Selector::Gmm => "gmm",
            Selector::Random => "random",
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Selector {
    type Err = DistillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Selector::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DistillError::UnknownSelector(s.to_string()))
    }
}

fn check_k(k: usize, rows: usize) -> Result<(), DistillError> {
    if k == 0 || k > rows {
        return Err(DistillError::InvalidK { k, rows });
    }
    Ok(())
}

/// Index of the row of `points` closest to `target`; ties go to the lowest index.
pub fn nearest_row(points: &Matrix, target: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, row) in points.row_iter().enumerate() {
        let d = squared_distance(row, target);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn pairs_from_rows(
    table: &EmbeddingTable,
    inputs: &Matrix,
    rows: &[usize],
    selector: Selector,
    seed: u64,
) -> Result<RosettaSet, DistillError> {
    if let Some(&bad) = table.indices.iter().find(|&&i| i >= inputs.rows()) {
        return Err(DistillError::Mismatch(format!(
            "table refers to row {bad} of a {}-row dataset",
            inputs.rows()
        )));
    }
    let source: Vec<usize> = rows.iter().map(|&r| table.indices[r]).collect();
    Ok(RosettaSet::new(
        inputs.select_rows(&source),
        table.means.select_rows(rows),
        selector.name(),
        table.source_digest.clone(),
        seed,
        source,
    )?)
}

/// For each centroid, the table row nearest to it, paired with that row's
/// original input. Output order follows centroid order.
pub fn select_rosetta(table: &EmbeddingTable, clusters: &ClusterResult, inputs: &Matrix, seed: u64) -> Result<RosettaSet, DistillError> {
    if clusters.centroids.cols() != table.dim() {
        return Err(DistillError::Mismatch("centroid and embedding dims differ".into()));
    }
    let rows: Vec<usize> = clusters
        .centroids
        .row_iter()
        .map(|c| nearest_row(&table.means, c))
        .collect();
    pairs_from_rows(table, inputs, &rows, Selector::Kmeans, seed)
}

/// Picks `k` anchor pairs with the given selector.
///
/// Cluster-based selectors take, for each cluster or component, the row
/// closest to its mean; `random` draws `k` distinct rows.
pub fn select_variant(
    table: &EmbeddingTable,
    inputs: &Matrix,
    k: usize,
    method: Selector,
    seed: u64,
) -> Result<RosettaSet, DistillError> {
    check_k(k, table.len())?;
    let rows: Vec<usize> = match method {
        Selector::Kmeans => {
            let clusters = kmeans(&table.means, k, seed, &KmeansConfig::default())?;
            return select_rosetta(table, &clusters, inputs, seed);
        }
        Selector::Agglomerative => {
            let labels = ward(&table.means, k)?;
            let means = cluster_means(&table.means, &labels, k);
            means.row_iter().map(|c| nearest_row(&table.means, c)).collect()
        }
        Selector::Gmm => {
            let fit = gmm(&table.means, k, seed)?;
            if fit.resets > 0 {
                warn!("gmm reset {} degenerate covariance(s)", fit.resets);
            }
            fit.means.row_iter().map(|c| nearest_row(&table.means, c)).collect()
        }
        Selector::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, table.len(), k).into_vec()
        }
    };
    pairs_from_rows(table, inputs, &rows, method, seed)
}

/// Mean of each labelled group; `labels` must cover `0..k`.
pub(crate) fn cluster_means(points: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let d = points.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (row, &l) in points.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

#[cfg(test)]
mod tests;
