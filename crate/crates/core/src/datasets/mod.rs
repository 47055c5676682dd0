//! The 8-Gaussians benchmark, its half-plane partition, train/validation
//! splits and tabular file IO.

mod io;

pub use io::{load_tabular, read_delimited, read_raw, save_tabular, write_delimited, write_raw, TabularFormat};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

pub const EIGHT_GAUSSIANS_COMPONENTS: usize = 8;
pub const EIGHT_GAUSSIANS_RADIUS: f64 = 4.0;
pub const EIGHT_GAUSSIANS_NOISE_DIMS: usize = 3;
pub const DEFAULT_SIGMA_CLUSTER: f64 = 0.5;
pub const DEFAULT_SIGMA_NOISE: f64 = 1.0;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.6;

/// Centers closer than this to the vertical axis count as lying on it.
const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset has no rows")]
    Empty,
    #[error("{0}")]
    InvalidParameter(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: expected {expected} columns, got {got}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("dataset was not produced by the 8-Gaussians generator")]
    NotEightGaussians,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionTag {
    D1,
    D2,
    Joint,
}

/// How an 8-Gaussians dataset was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeta {
    pub seed: u64,
    pub n_per_component: usize,
    pub sigma_cluster: f64,
    pub sigma_noise: f64,
    /// Component centers in the signal plane, indexed by label.
    pub centers: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
    pub tag: PartitionTag,
    pub meta: Option<GaussianMeta>,
    /// Row index of each row in the dataset it was derived from.
    pub origin: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Option<Vec<usize>>) -> Result<Self, DatasetError> {
        if inputs.rows() == 0 {
            return Err(DatasetError::Empty);
        }
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(DatasetError::InvalidParameter(format!(
                    "{} labels for {} rows",
                    l.len(),
                    inputs.rows()
                )));
            }
        }
        let origin = (0..inputs.rows()).collect();
        Ok(Self {
            inputs,
            labels,
            tag: PartitionTag::Joint,
            meta: None,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows at `indices`, keeping labels, tag and metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DatasetError> {
        if indices.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Self {
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            tag: self.tag,
            meta: self.meta.clone(),
            origin: indices.iter().map(|&i| self.origin[i]).collect(),
        })
    }

    /// Rows of `self` followed by rows of `other`, tagged joint. Labels
    /// survive only when both sides have them.
    pub fn concat(&self, other: &Dataset) -> Result<Self, DatasetError> {
        let inputs = self
            .inputs
            .vstack(&other.inputs)
            .map_err(|e| DatasetError::InvalidParameter(e.to_string()))?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let meta = if self.meta == other.meta { self.meta.clone() } else { None };
        Ok(Self {
            inputs,
            labels,
            tag: PartitionTag::Joint,
            meta,
            origin: self.origin.iter().chain(&other.origin).copied().collect(),
        })
    }
}

/// Centers of the 8 components: radius 4, angles `2πj/8`.
pub fn eight_gaussian_centers() -> Vec<[f64; 2]> {
    (0..EIGHT_GAUSSIANS_COMPONENTS)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / EIGHT_GAUSSIANS_COMPONENTS as f64;
            [EIGHT_GAUSSIANS_RADIUS * a.cos(), EIGHT_GAUSSIANS_RADIUS * a.sin()]
        })
        .collect()
}

/// Eight isotropic Gaussians on a circle in the first two coordinates,
/// followed by three pure-noise coordinates. Rows are grouped by component.
pub fn gen_8gaussians(
    n_per_component: usize,
    sigma_cluster: f64,
    sigma_noise: f64,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if n_per_component == 0 {
        return Err(DatasetError::InvalidParameter("n_per_component must be >= 1".into()));
    }
    for (name, s) in [("sigma_cluster", sigma_cluster), ("sigma_noise", sigma_noise)] {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(DatasetError::InvalidParameter(format!("{name} must be finite and >= 0")));
        }
    }
    let centers = eight_gaussian_centers();
    let dim = 2 + EIGHT_GAUSSIANS_NOISE_DIMS;
    let n = n_per_component * centers.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (j, c) in centers.iter().enumerate() {
        for _ in 0..n_per_component {
            for &ci in c {
                data.push(ci + sigma_cluster * rng.sample::<f64, _>(StandardNormal));
            }
            for _ in 0..EIGHT_GAUSSIANS_NOISE_DIMS {
                data.push(sigma_noise * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(j);
        }
    }
    let mut ds = Dataset::new(Matrix::new(n, dim, data).expect("finite samples"), Some(labels))?;
    ds.meta = Some(GaussianMeta {
        seed,
        n_per_component,
        sigma_cluster,
        sigma_noise,
        centers,
    });
    Ok(ds)
}

/// Whether a component center lies in the D1 half-plane: `x > 0`, or on
/// the vertical axis with `y > 0`. This puts exactly four of the eight
/// components (angles −π/4, 0, π/4, π/2) on each side.
pub fn in_first_half(center: [f64; 2]) -> bool {
    if center[0].abs() < AXIS_TOLERANCE {
        center[1] > 0.0
    } else {
        center[0] > 0.0
    }
}

/// Splits an 8-Gaussians dataset by component along the vertical axis.
pub fn partition_halfplane(data: &Dataset) -> Result<(Dataset, Dataset), DatasetError> {
    let (meta, labels) = match (&data.meta, &data.labels) {
        (Some(m), Some(l)) if m.centers.len() == EIGHT_GAUSSIANS_COMPONENTS => (m, l),
        _ => return Err(DatasetError::NotEightGaussians),
    };
    if labels.iter().any(|&l| l >= meta.centers.len()) {
        return Err(DatasetError::NotEightGaussians);
    }
    let (first, second): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_first_half(meta.centers[labels[i]]));
    let mut d1 = data.subset(&first)?;
    let mut d2 = data.subset(&second)?;
    d1.tag = PartitionTag::D1;
    d2.tag = PartitionTag::D2;
    Ok((d1, d2))
}

/// Seeded shuffle, then the first `round(n·fraction)` rows train and the
/// rest validate. Each side keeps the original row order.
pub fn split_train_val(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidParameter(format!("fraction {fraction} not in (0, 1)")));
    }
    let n = data.len();
    if n < 2 {
        return Err(DatasetError::InvalidParameter("need at least 2 rows to split".into()));
    }
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val) = order.split_at_mut(n_train);
    train.sort_unstable();
    val.sort_unstable();
    Ok((data.subset(train)?, data.subset(val)?))
}
