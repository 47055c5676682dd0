use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VaeError;
use crate::autodiff::{chain_specs, forward_mlp, Activation, Mlp, ParamSet};
use crate::linalg::{build_cholesky, lower_index, lower_len, Matrix, Vector};

/// Fully connected encoder/decoder layout.
///
/// The encoder trunk is `input → hidden[0] → … → hidden[n-1]`; three linear
/// heads read the trunk output (mean, raw Cholesky diagonal, strictly lower
/// Cholesky entries). The decoder mirrors the trunk:
/// `latent → hidden[n-1] → … → hidden[0] → input` with a linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            latent_dim,
            activation: Activation::Relu,
        }
    }

    /// 5 → 32 → 32 → heads, 2-d latent.
    pub fn eight_gaussians() -> Self {
        Self::new(5, vec![32, 32], 2)
    }

    pub fn lower_dim(&self) -> usize {
        lower_len(self.latent_dim)
    }

    fn validate(&self) -> Result<(), VaeError> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(VaeError::InvalidArchitecture(format!("{self:?}")));
        }
        Ok(())
    }

    fn trunk_out(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

/// Where a set of weights came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: String,
    pub epochs: usize,
}

/// Encoder and decoder weights with their layout and provenance.
///
/// All tensors share one [`ParamSet`]; encoder names start with `encoder.`
/// and decoder names with `decoder.`.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub arch: Architecture,
    pub params: ParamSet,
    pub provenance: Provenance,
    pub(crate) nets: Networks,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Networks {
    pub trunk: Option<Mlp>,
    pub mu: Mlp,
    pub diag: Mlp,
    pub lower: Option<Mlp>,
    pub decoder: Mlp,
}

struct Layout {
    trunk: Option<Vec<crate::autodiff::LayerSpec>>,
    mu: Vec<crate::autodiff::LayerSpec>,
    diag: Vec<crate::autodiff::LayerSpec>,
    lower: Option<Vec<crate::autodiff::LayerSpec>>,
    decoder: Vec<crate::autodiff::LayerSpec>,
}

fn layout(arch: &Architecture) -> Layout {
    let act = arch.activation;
    let trunk = (!arch.hidden.is_empty()).then(|| {
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        chain_specs(&widths, act, act)
    });
    let head = |out: usize| chain_specs(&[arch.trunk_out(), out], act, Activation::Identity);
    let mut dec_widths = vec![arch.latent_dim];
    dec_widths.extend(arch.hidden.iter().rev());
    dec_widths.push(arch.input_dim);
    Layout {
        trunk,
        mu: head(arch.latent_dim),
        diag: head(arch.latent_dim),
        lower: (arch.lower_dim() > 0).then(|| head(arch.lower_dim())),
        decoder: chain_specs(&dec_widths, act, Activation::Identity),
    }
}

/// Per-row posterior parameters for a batch of inputs.
#[derive(Clone, Debug)]
pub struct BatchPosterior {
    pub means: Matrix,
    pub diag_raw: Matrix,
    /// `B × d(d−1)/2`; zero columns when `d = 1`.
    pub lower: Matrix,
}

impl BatchPosterior {
    pub fn posterior(&self, row: usize) -> GaussianPosterior {
        let chol = build_cholesky(self.diag_raw.row(row), self.lower.row(row)).expect("consistent head widths");
        GaussianPosterior {
            mean: Vector::from(self.means.row(row)),
            chol,
        }
    }
}

impl ModelState {
    /// All weights zero.
    pub fn zeroed(arch: Architecture) -> Result<Self, VaeError> {
        arch.validate()?;
        let l = layout(&arch);
        let mut params = ParamSet::new();
        let trunk = l.trunk.map(|s| Mlp::register(&mut params, "encoder.trunk", &s)).transpose()?;
        let mu = Mlp::register(&mut params, "encoder.mu", &l.mu)?;
        let diag = Mlp::register(&mut params, "encoder.diag", &l.diag)?;
        let lower = l.lower.map(|s| Mlp::register(&mut params, "encoder.lower", &s)).transpose()?;
        let decoder = Mlp::register(&mut params, "decoder", &l.decoder)?;
        Ok(Self {
            arch,
            params,
            provenance: Provenance::default(),
            nets: Networks {
                trunk,
                mu,
                diag,
                lower,
                decoder,
            },
        })
    }

    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, VaeError> {
        let mut model = Self::zeroed(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = model.nets.clone();
        if let Some(t) = &nets.trunk {
            t.init_glorot(&mut model.params, &mut rng);
        }
        nets.mu.init_glorot(&mut model.params, &mut rng);
        nets.diag.init_glorot(&mut model.params, &mut rng);
        if let Some(l) = &nets.lower {
            l.init_glorot(&mut model.params, &mut rng);
        }
        nets.decoder.init_glorot(&mut model.params, &mut rng);
        model.provenance.seed = seed;
        Ok(model)
    }

    /// Rebinds a parameter set (e.g. from a checkpoint) to `arch`.
    pub fn from_params(arch: Architecture, params: ParamSet, provenance: Provenance) -> Result<Self, VaeError> {
        arch.validate()?;
        let l = layout(&arch);
        let nets = Networks {
            trunk: l.trunk.map(|s| Mlp::bind(&params, "encoder.trunk", &s)).transpose()?,
            mu: Mlp::bind(&params, "encoder.mu", &l.mu)?,
            diag: Mlp::bind(&params, "encoder.diag", &l.diag)?,
            lower: l.lower.map(|s| Mlp::bind(&params, "encoder.lower", &s)).transpose()?,
            decoder: Mlp::bind(&params, "decoder", &l.decoder)?,
        };
        let expected = Self::zeroed(arch.clone())?.params;
        if !expected.same_layout(&params) {
            return Err(VaeError::InvalidArchitecture(
                "parameter set has extra or reordered tensors".into(),
            ));
        }
        Ok(Self {
            arch,
            params,
            provenance,
            nets,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Names of encoder tensors, in registration order.
    pub fn encoder_params(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().filter(|(n, _)| n.starts_with("encoder."))
    }

    pub fn decoder_params(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().filter(|(n, _)| n.starts_with("decoder."))
    }

    /// SHA-256 over the architecture and the little-endian weight bytes,
    /// truncated to 16 hex digits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.arch).expect("architecture serializes"));
        for (name, m) in self.params.iter() {
            h.update(name.as_bytes());
            for v in m.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    fn trunk_batch(&self, x: &Matrix) -> Result<Matrix, VaeError> {
        if x.cols() != self.arch.input_dim {
            return Err(VaeError::DimMismatch {
                what: "input",
                expected: self.arch.input_dim,
                got: x.cols(),
            });
        }
        Ok(match &self.nets.trunk {
            Some(t) => t.forward_batch(&self.params, x)?,
            None => x.clone(),
        })
    }

    /// Posterior parameters for every row of `x`.
    pub fn encode_batch(&self, x: &Matrix) -> Result<BatchPosterior, VaeError> {
        let h = self.trunk_batch(x)?;
        let means = self.nets.mu.forward_batch(&self.params, &h)?;
        let diag_raw = self.nets.diag.forward_batch(&self.params, &h)?;
        let lower = match &self.nets.lower {
            Some(l) => l.forward_batch(&self.params, &h)?,
            None => Matrix::zeros(x.rows(), 0),
        };
        if !(means.is_finite() && diag_raw.is_finite() && lower.is_finite()) {
            return Err(VaeError::NonFinite("encoder output"));
        }
        if diag_raw.as_slice().iter().any(|v| !v.exp().is_finite() || v.exp() == 0.0) {
            return Err(VaeError::NonFinite("cholesky diagonal"));
        }
        Ok(BatchPosterior { means, diag_raw, lower })
    }

    /// Posterior means only.
    pub fn encode_means(&self, x: &Matrix) -> Result<Matrix, VaeError> {
        let h = self.trunk_batch(x)?;
        let means = self.nets.mu.forward_batch(&self.params, &h)?;
        if !means.is_finite() {
            return Err(VaeError::NonFinite("encoder mean"));
        }
        Ok(means)
    }

    /// Reconstruction means for every row of `z`.
    pub fn decode_batch(&self, z: &Matrix) -> Result<Matrix, VaeError> {
        if z.cols() != self.arch.latent_dim {
            return Err(VaeError::DimMismatch {
                what: "latent",
                expected: self.arch.latent_dim,
                got: z.cols(),
            });
        }
        let out = self.nets.decoder.forward_batch(&self.params, z)?;
        if !out.is_finite() {
            return Err(VaeError::NonFinite("decoder output"));
        }
        Ok(out)
    }
}

/// Full-covariance Gaussian `N(mean, chol · cholᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vector,
    pub chol: Matrix,
}

impl GaussianPosterior {
    pub fn new(mean: Vector, chol: Matrix) -> Result<Self, VaeError> {
        let d = mean.len();
        if chol.shape() != (d, d) {
            return Err(VaeError::DimMismatch {
                what: "cholesky factor",
                expected: d,
                got: chol.rows(),
            });
        }
        for i in 0..d {
            if !(chol[(i, i)] > 0.0) {
                return Err(VaeError::InvalidPosterior("cholesky diagonal must be positive"));
            }
            if ((i + 1)..d).any(|j| chol[(i, j)] != 0.0) {
                return Err(VaeError::InvalidPosterior("cholesky factor must be lower triangular"));
            }
        }
        Ok(Self { mean, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> Matrix {
        self.chol.matmul_transposed(&self.chol).expect("square factor")
    }
}

/// Posterior of a single input.
pub fn encode(model: &ModelState, x: &[f64]) -> Result<GaussianPosterior, VaeError> {
    if x.len() != model.arch.input_dim {
        return Err(VaeError::DimMismatch {
            what: "input",
            expected: model.arch.input_dim,
            got: x.len(),
        });
    }
    let h = match &model.nets.trunk {
        Some(t) => forward_mlp(&model.params, t, x)?.output,
        None => Vector::from(x),
    };
    let mean = forward_mlp(&model.params, &model.nets.mu, &h)?.output;
    let diag = forward_mlp(&model.params, &model.nets.diag, &h)?.output;
    let lower = match &model.nets.lower {
        Some(l) => forward_mlp(&model.params, l, &h)?.output,
        None => Vector::zeros(0),
    };
    let chol = build_cholesky(&diag, &lower)?;
    if !chol.is_finite() || chol.diag().iter().any(|&v| v == 0.0) {
        return Err(VaeError::NonFinite("cholesky factor"));
    }
    Ok(GaussianPosterior { mean, chol })
}

/// Reconstruction mean `m(z)`.
pub fn decode(model: &ModelState, z: &[f64]) -> Result<Vector, VaeError> {
    if z.len() != model.arch.latent_dim {
        return Err(VaeError::DimMismatch {
            what: "latent",
            expected: model.arch.latent_dim,
            got: z.len(),
        });
    }
    Ok(forward_mlp(&model.params, &model.nets.decoder, z)?.output)
}

/// `mean + chol · noise`.
pub fn sample_reparam(post: &GaussianPosterior, noise: &[f64]) -> Result<Vector, VaeError> {
    let d = post.dim();
    if noise.len() != d {
        return Err(VaeError::DimMismatch {
            what: "noise",
            expected: d,
            got: noise.len(),
        });
    }
    let shift = post.chol.mat_vec(noise)?;
    Ok(Vector::from(
        post.mean.iter().zip(&shift).map(|(m, s)| m + s).collect::<Vec<_>>(),
    ))
}

/// `KL(N(μ, LLᵀ) ‖ N(0, I)) = ½(tr(LLᵀ) + ‖μ‖² − d − 2 Σ log Lᵢᵢ)`.
pub fn kl_to_standard_normal(post: &GaussianPosterior) -> f64 {
    let d = post.dim();
    let trace: f64 = post.chol.as_slice().iter().map(|v| v * v).sum();
    let mean_sq: f64 = post.mean.iter().map(|v| v * v).sum();
    let log_diag: f64 = (0..d).map(|i| post.chol[(i, i)].ln()).sum();
    0.5 * (trace + mean_sq - d as f64 - 2.0 * log_diag)
}

/// Packs the strictly-lower part of `chol` in row-major order.
pub fn pack_lower(chol: &Matrix) -> Vec<f64> {
    let d = chol.rows();
    let mut out = vec![0.0; lower_len(d)];
    for i in 1..d {
        for j in 0..i {
            out[lower_index(i, j)] = chol[(i, j)];
        }
    }
    out
}
