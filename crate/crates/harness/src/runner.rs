//! Training runs for the compared methods, executed on a worker pool with
//! results gathered in fixed (method, run index) order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use rosetta_core::distill::EmbeddingTable;
use rosetta_core::linalg::Matrix;
use rosetta_core::vae::{save_checkpoint, train, Architecture, EpochStats, ModelState, RosettaSet, TrainConfig, VaeError};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::HarnessError;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "ROSETTA_WORKERS";

/// Runs `f` on a pool sized by [`WORKERS_ENV`] (all cores when unset).
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let threads = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| HarnessError::Config(format!("{WORKERS_ENV}={v} is not a count")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Hyperparameters chosen for the non-default methods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub beta_vae_beta: f64,
    pub r_vae_rho: f64,
}

/// Training configuration of `method`: the VAE uses β = 1 and no penalty,
/// the β-VAE swaps in its β, and the R-VAE keeps β = 1 and adds ρ.
pub fn method_config(method: Method, base: &TrainConfig, settings: &MethodSettings, seed: u64) -> TrainConfig {
    let mut c = base.clone();
    c.seed = seed;
    c.beta = 1.0;
    c.rho = 0.0;
    match method {
        Method::Vae => {}
        Method::BetaVae => c.beta = settings.beta_vae_beta,
        Method::RVae => c.rho = settings.r_vae_rho,
    }
    c
}

/// Training rows for every method: `data` plus one copy of each anchor
/// input. Only the R-VAE additionally receives the anchor set itself, so
/// baselines never see the anchor latents.
pub fn method_inputs<'a>(method: Method, data: &Matrix, rosetta: Option<&'a RosettaSet>) -> (Matrix, Option<&'a RosettaSet>) {
    let rows = match rosetta {
        Some(rs) => data.vstack(&rs.inputs).expect("anchor inputs share the data width"),
        None => data.clone(),
    };
    let penalty_set = if method.uses_penalty() { rosetta } else { None };
    (rows, penalty_set)
}

/// Files and provenance of one finished run. Paths are relative to the
/// output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub run: usize,
    pub seed: u64,
    pub config_digest: String,
    pub model_digest: String,
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
    pub trace: PathBuf,
    pub epochs: usize,
    pub wall_clock_secs: f64,
    pub error: Option<String>,
}

/// A finished run's model and latent means over the evaluation rows.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Method,
    pub run: usize,
    pub seed: u64,
    pub model: ModelState,
    pub embeddings: EmbeddingTable,
    pub trace: Vec<EpochStats>,
}

/// One training job.
pub struct RunSpec<'a> {
    pub method: Method,
    pub run: usize,
    pub config: TrainConfig,
    /// Seed for weight initialization; usually `config.seed`.
    pub init_seed: u64,
    pub arch: Architecture,
    pub data: &'a Matrix,
    pub validation: Option<&'a Matrix>,
    pub rosetta: Option<&'a RosettaSet>,
    /// Rows whose latent means are recorded after training.
    pub eval: &'a Matrix,
}

/// Where run artifacts go; `None` keeps everything in memory.
#[derive(Clone, Debug)]
pub struct ArtifactDir {
    pub root: PathBuf,
    pub prefix: PathBuf,
}

impl ArtifactDir {
    pub fn new(root: &Path, prefix: impl Into<PathBuf>) -> Self {
        Self {
            root: root.to_path_buf(),
            prefix: prefix.into(),
        }
    }

    fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, HarnessError> {
        r.map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

pub fn trace_csv(trace: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss,rosetta_penalty\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.17e}"));
    for s in trace {
        out.push_str(&format!(
            "{},{:.17e},{},{}\n",
            s.epoch,
            s.train_loss,
            opt(s.validation_loss),
            opt(s.rosetta_penalty)
        ));
    }
    out
}

pub fn embeddings_csv(table: &EmbeddingTable) -> String {
    let mut out = String::from("index");
    for j in 0..table.dim() {
        out.push_str(&format!(",mu{j}"));
    }
    out.push('\n');
    for (r, &idx) in table.indices.iter().enumerate() {
        out.push_str(&idx.to_string());
        for v in table.means.row(r) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

fn execute(spec: &RunSpec<'_>) -> Result<RunResult, VaeError> {
    let init = ModelState::init(spec.arch.clone(), spec.init_seed)?;
    let (rows, penalty) = method_inputs(spec.method, spec.data, spec.rosetta);
    let out = train(init, &rows, spec.validation, penalty, &spec.config, &mut |_| {})?;
    let embeddings = EmbeddingTable::from_model(&out.model, spec.eval).map_err(|e| match e {
        rosetta_core::distill::DistillError::Vae(v) => v,
        other => VaeError::InvalidConfig(other.to_string()),
    })?;
    Ok(RunResult {
        method: spec.method,
        run: spec.run,
        seed: spec.config.seed,
        model: out.model,
        embeddings,
        trace: out.trace,
    })
}

fn persist(result: &RunResult, dir: &ArtifactDir) -> Result<(PathBuf, PathBuf, PathBuf), HarnessError> {
    let rel = dir.prefix.join(result.method.name()).join(format!("run-{:02}", result.run));
    let abs = dir.root.join(&rel);
    ArtifactDir::io(&abs, std::fs::create_dir_all(&abs))?;
    let ckpt = rel.join("model.ckpt");
    save_checkpoint(&result.model, &dir.root.join(&ckpt))?;
    let emb = rel.join("embeddings.csv");
    let p = dir.root.join(&emb);
    ArtifactDir::io(&p, std::fs::write(&p, embeddings_csv(&result.embeddings)))?;
    let tr = rel.join("trace.csv");
    let p = dir.root.join(&tr);
    ArtifactDir::io(&p, std::fs::write(&p, trace_csv(&result.trace)))?;
    Ok((ckpt, emb, tr))
}

/// Trains every job in parallel. Diverged runs come back as `None` with an
/// error in their record; any other failure aborts the batch.
pub fn run_batch(
    specs: &[RunSpec<'_>],
    artifacts: Option<&ArtifactDir>,
) -> Result<(Vec<Option<RunResult>>, Vec<RunRecord>), HarnessError> {
    let outcomes: Vec<(Result<RunResult, VaeError>, f64)> = with_workers(|| {
        specs
            .par_iter()
            .map(|s| {
                let start = Instant::now();
                let r = execute(s);
                (r, start.elapsed().as_secs_f64())
            })
            .collect()
    })?;
    let mut results = Vec::with_capacity(specs.len());
    let mut records = Vec::with_capacity(specs.len());
    for (spec, (outcome, secs)) in specs.iter().zip(outcomes) {
        let mut record = RunRecord {
            method: spec.method.name().to_string(),
            run: spec.run,
            seed: spec.config.seed,
            config_digest: spec.config.digest(),
            model_digest: String::new(),
            checkpoint: PathBuf::new(),
            embeddings: PathBuf::new(),
            trace: PathBuf::new(),
            epochs: 0,
            wall_clock_secs: secs,
            error: None,
        };
        match outcome {
            Ok(result) => {
                record.model_digest = result.model.digest();
                record.epochs = result.trace.len();
                if let Some(dir) = artifacts {
                    let (c, e, t) = persist(&result, dir)?;
                    record.checkpoint = c;
                    record.embeddings = e;
                    record.trace = t;
                }
                info!("{} run {} (seed {}) done in {secs:.2}s", spec.method, spec.run, spec.config.seed);
                results.push(Some(result));
            }
            Err(e @ VaeError::Diverged { .. }) => {
                warn!("{} run {} failed: {e}", spec.method, spec.run);
                record.error = Some(e.to_string());
                results.push(None);
            }
            Err(e) => return Err(e.into()),
        }
        records.push(record);
    }
    Ok((results, records))
}

/// Writes run records as JSON to `<root>/<prefix>/records.json`.
pub fn write_records(dir: &ArtifactDir, records: &[RunRecord]) -> Result<(), HarnessError> {
    let abs = dir.root.join(&dir.prefix);
    ArtifactDir::io(&abs, std::fs::create_dir_all(&abs))?;
    let path = abs.join("records.json");
    let body = serde_json::to_string_pretty(records).expect("records serialize") + "\n";
    ArtifactDir::io(&path, std::fs::write(&path, body))
}
