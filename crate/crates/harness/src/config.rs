//! Experiment configuration, loaded from TOML and overridable field by field.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rosetta_core::autodiff::Activation;
use rosetta_core::datasets::{TabularFormat, DEFAULT_SIGMA_CLUSTER, DEFAULT_SIGMA_NOISE, DEFAULT_TRAIN_FRACTION};
use rosetta_core::distill::Selector;
use rosetta_core::vae::{Architecture, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vae,
    BetaVae,
    RVae,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vae, Method::BetaVae, Method::RVae];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vae => "vae",
            Method::BetaVae => "beta_vae",
            Method::RVae => "r_vae",
        }
    }

    /// Whether the method trains with the Rosetta penalty rather than
    /// seeing the anchor inputs as plain data.
    pub fn uses_penalty(self) -> bool {
        self == Method::RVae
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Reproducibility,
    Sequential,
    Grid,
    Ablation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    RpCount,
    Selector,
    Architecture,
}

impl FromStr for AblationAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rp_count" => Ok(AblationAxis::RpCount),
            "selector" => Ok(AblationAxis::Selector),
            "architecture" => Ok(AblationAxis::Architecture),
            _ => Err(HarnessError::Config(format!("unknown ablation axis `{s}`"))),
        }
    }
}

/// Where the experiment's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    EightGaussians {
        n_per_component: usize,
        sigma_cluster: f64,
        sigma_noise: f64,
        seed: u64,
    },
    /// External table. The sequential protocol needs a labelled 8-Gaussians
    /// layout and rejects these.
    File { path: PathBuf, format: TabularFormat },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::EightGaussians {
            n_per_component: 100,
            sigma_cluster: DEFAULT_SIGMA_CLUSTER,
            sigma_noise: DEFAULT_SIGMA_NOISE,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::EightGaussians { .. } => "8gaussians".into(),
            DatasetSpec::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }
}

/// Encoder trunk widths (mirrored by the decoder), latent size and activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            latent_dim: 2,
            activation: Activation::Relu,
        }
    }
}

impl ArchSpec {
    pub fn build(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
            activation: self.activation,
        }
    }
}

/// Inclusive `start:step:end` range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub step: f64,
    pub end: f64,
}

impl GridRange {
    pub fn new(start: f64, step: f64, end: f64) -> Self {
        Self { start, step, end }
    }

    /// `{start, start+step, …, end}`; a non-positive step yields `{start}`.
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.end < self.start {
            return vec![self.start];
        }
        let count = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.start + i as f64 * self.step).collect()
    }

    pub fn notation(&self) -> String {
        format!("[{}:{}:{}]", self.start, self.step, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Run the search before the protocol; otherwise use the fixed values.
    pub enabled: bool,
    pub epochs: usize,
    pub beta: GridRange,
    pub rho: GridRange,
    /// β for the β-VAE when the search is off.
    pub beta_vae_beta: f64,
    /// ρ for the R-VAE when the search is off.
    pub r_vae_rho: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 20,
            beta: GridRange::new(0.0, 2.5, 25.0),
            rho: GridRange::new(0.0, 0.75, 15.0),
            beta_vae_beta: 2.5,
            r_vae_rho: 7.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub rp_counts: Vec<usize>,
    /// Named trunk variants; the one called `same` is the normalization
    /// reference.
    pub architectures: Vec<ArchVariant>,
}

/// A named trunk used by the architecture sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchVariant {
    pub name: String,
    pub hidden: Vec<usize>,
}

impl ArchVariant {
    pub fn new(name: &str, hidden: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            hidden: hidden.to_vec(),
        }
    }
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            axis: AblationAxis::RpCount,
            rp_counts: vec![2, 4, 8, 16],
            architectures: vec![
                ArchVariant::new("simple", &[16]),
                ArchVariant::new("same", &[32, 32]),
                ArchVariant::new("complex", &[64, 64, 64]),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub architecture: ArchSpec,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub n_repeats: usize,
    /// Run `i` of every method uses `base_seed + i`.
    pub base_seed: u64,
    /// When set, every run starts from weights drawn with this seed; only
    /// shuffling and noise then differ between runs.
    pub init_seed: Option<u64>,
    /// Seed for the template/phase-1 models, splits and distillation.
    pub template_seed: u64,
    pub k: usize,
    pub selector: Selector,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub train_fraction: f64,
    /// Window (epochs) for the joint template's plateau detection.
    pub plateau_window: usize,
    pub grid: GridSpec,
    pub ablation: AblationSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            architecture: ArchSpec::default(),
            train: TrainConfig::default(),
            protocol: Protocol::Reproducibility,
            n_repeats: 10,
            base_seed: 1000,
            init_seed: None,
            template_seed: 0,
            k: 8,
            selector: Selector::Kmeans,
            output_dir: PathBuf::from("rosetta-out"),
            methods: Method::ALL.to_vec(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            plateau_window: 20,
            grid: GridSpec::default(),
            ablation: AblationSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let needs_runs = matches!(self.protocol, Protocol::Reproducibility | Protocol::Ablation);
        if needs_runs && self.n_repeats < 2 {
            return bad(format!("n_repeats must be >= 2, got {}", self.n_repeats));
        }
        if self.n_repeats == 0 {
            return bad("n_repeats must be >= 1".into());
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} not in (0, 1)", self.train_fraction));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.plateau_window == 0 {
            return bad("plateau_window must be >= 1".into());
        }
        if self.architecture.latent_dim == 0 || self.architecture.hidden.contains(&0) {
            return bad("architecture widths must be >= 1".into());
        }
        if let DatasetSpec::File { path, .. } = &self.dataset {
            if !path.exists() {
                return bad(format!("dataset file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form,
    /// excluding the output directory.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serializes");
        let full = Sha256::digest(json);
        full.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
