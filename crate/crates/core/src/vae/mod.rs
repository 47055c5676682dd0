//! Gaussian VAE with full-covariance posteriors, the β-ELBO, the Rosetta
//! penalty, training and checkpoints.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{effective_rho, elbo_loss, rosetta_loss, rosetta_penalty, LossGraph};
pub use model::{
    decode, encode, kl_to_standard_normal, pack_lower, sample_reparam, Architecture, BatchPosterior,
    GaussianPosterior, ModelState, Provenance,
};
pub use train::{standard_normal_matrix, train, windowed_medians, EpochStats, TrainOutcome};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::linalg::{LinalgError, Matrix, DEFAULT_EIGEN_FLOOR};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("{what} has width {got}, expected {expected}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid posterior: {0}")]
    InvalidPosterior(&'static str),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("rho > 0 requires a nonempty rosetta set")]
    MissingRosetta,
    #[error("invalid rosetta set: {0}")]
    InvalidRosetta(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: usize, step: usize, reason: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// KL weight; 1 is the standard VAE.
    pub beta: f64,
    /// Rosetta penalty weight; 0 disables the penalty entirely.
    pub rho: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Eigenvalue floor used by downstream volume metrics; recorded with
    /// the run so reported numbers are reproducible.
    pub eigen_floor: f64,
    /// Scale the penalty by `R / batch_size`.
    pub rosetta_weighting: bool,
    /// Stop once the windowed median of the validation loss has not
    /// improved for this many epochs. Needs validation data.
    pub plateau_window: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            rho: 0.0,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            rosetta_weighting: true,
            plateau_window: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: &str| Err(VaeError::InvalidConfig(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and >= 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.eigen_floor > 0.0 && self.eigen_floor.is_finite()) {
            return bad("eigen floor must be finite and > 0");
        }
        if self.plateau_window == Some(0) {
            return bad("plateau window must be >= 1");
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))[..16].to_string()
    }
}

/// Anchor pairs `(x̂_r, ẑ_r)` distilled from a trained model.
///
/// Row `r` of `inputs` is `x̂_r`; row `r` of `latents` is `ẑ_r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosettaSet {
    pub inputs: Matrix,
    pub latents: Matrix,
    pub selector: String,
    pub source_digest: String,
    pub seed: u64,
    /// Row of the source dataset each pair came from.
    pub source_indices: Vec<usize>,
}

impl RosettaSet {
    pub fn new(
        inputs: Matrix,
        latents: Matrix,
        selector: impl Into<String>,
        source_digest: impl Into<String>,
        seed: u64,
        source_indices: Vec<usize>,
    ) -> Result<Self, VaeError> {
        if inputs.rows() == 0 {
            return Err(VaeError::InvalidRosetta("no pairs"));
        }
        if inputs.rows() != latents.rows() {
            return Err(VaeError::InvalidRosetta("input and latent counts differ"));
        }
        if source_indices.len() != inputs.rows() {
            return Err(VaeError::InvalidRosetta("source index count differs from pair count"));
        }
        if inputs.cols() == 0 || latents.cols() == 0 {
            return Err(VaeError::InvalidRosetta("zero-width vectors"));
        }
        Ok(Self {
            inputs,
            latents,
            selector: selector.into(),
            source_digest: source_digest.into(),
            seed,
            source_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.latents.cols()
    }

    pub fn pair(&self, r: usize) -> (&[f64], &[f64]) {
        (self.inputs.row(r), self.latents.row(r))
    }
}
