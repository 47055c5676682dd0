use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{rosetta_loss, ModelState, RosettaSet, TrainConfig, VaeError};
use crate::autodiff::{adam_step, AdamConfig, AdamState, AutodiffError};
use crate::linalg::Matrix;

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

/// Losses recorded after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Size-weighted mean of the minibatch objectives seen during the epoch.
    pub train_loss: f64,
    /// Objective on the validation rows with fixed noise, after the epoch.
    pub validation_loss: Option<f64>,
    /// Unweighted Rosetta penalty after the epoch, when a set is used.
    pub rosetta_penalty: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub trace: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.trace.len()
    }
}

/// `rows × cols` matrix of independent standard-normal draws.
pub fn standard_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(rows, cols, data).expect("finite normal draws")
}

/// Medians of each trailing window of `window` values, one per position
/// starting at index `window − 1`.
pub fn windowed_medians(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| {
            let mut s = w.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            }
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn diverged(epoch: usize, step: usize, err: VaeError) -> VaeError {
    match err {
        VaeError::NonFinite(_) | VaeError::Autodiff(AutodiffError::NonFinite { .. }) => VaeError::Diverged {
            epoch,
            step,
            reason: err.to_string(),
        },
        other => other,
    }
}

/// Minimizes the (optionally Rosetta-augmented) β-ELBO with Adam.
///
/// Each epoch shuffles `data` with a generator derived from `config.seed`
/// and walks it in batches of `config.batch_size` (the last batch may be
/// short). When `config.rho > 0` every step adds the penalty over the whole
/// Rosetta set. Reparameterization noise comes from its own seeded stream,
/// so identical inputs give bitwise-identical results.
pub fn train(
    init: ModelState,
    data: &Matrix,
    validation: Option<&Matrix>,
    rosetta: Option<&RosettaSet>,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, VaeError> {
    config.validate()?;
    if data.rows() == 0 {
        return Err(VaeError::EmptyBatch);
    }
    if data.cols() != init.input_dim() {
        return Err(VaeError::DimMismatch {
            what: "training data",
            expected: init.input_dim(),
            got: data.cols(),
        });
    }
    if config.rho > 0.0 && rosetta.map_or(true, |r| r.is_empty()) {
        return Err(VaeError::MissingRosetta);
    }
    if config.plateau_window.is_some() && validation.is_none() {
        return Err(VaeError::InvalidConfig("plateau detection needs validation data".into()));
    }
    let rosetta = rosetta.filter(|_| config.rho > 0.0);
    let d = init.latent_dim();
    let mut model = init;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = stream(config.seed, SHUFFLE_STREAM);
    let mut noise_rng = stream(config.seed, NOISE_STREAM);
    let val_noise = validation.map(|v| standard_normal_matrix(&mut stream(config.seed, VALIDATION_STREAM), v.rows(), d));

    let n = data.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    let mut best_median = f64::INFINITY;
    let mut best_epoch = 0;
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch = data.select_rows(chunk);
            let noise = standard_normal_matrix(&mut noise_rng, chunk.len(), d);
            let graph = rosetta_loss(&model, &batch, &noise, rosetta, config).map_err(|e| diverged(epoch, step, e))?;
            total += graph.value() * chunk.len() as f64;
            let grads = graph.backward().map_err(|e| diverged(epoch, step, e))?;
            drop(graph);
            if !grads.is_finite() {
                return Err(VaeError::Diverged {
                    epoch,
                    step,
                    reason: "non-finite gradient".into(),
                });
            }
            adam_step(&mut model.params, &grads, &mut adam)?;
        }
        let validation_loss = match (validation, &val_noise) {
            (Some(v), Some(noise)) => Some(
                rosetta_loss(&model, v, noise, rosetta, config)
                    .map_err(|e| diverged(epoch, step, e))?
                    .value(),
            ),
            _ => None,
        };
        let stats = EpochStats {
            epoch,
            train_loss: total / n as f64,
            validation_loss,
            rosetta_penalty: rosetta.map(|r| super::rosetta_penalty(&model, r)).transpose()?,
        };
        debug!("epoch {epoch}: train {:.6} val {:?}", stats.train_loss, stats.validation_loss);
        progress(&stats);
        trace.push(stats);

        if let Some(w) = config.plateau_window {
            if trace.len() >= w {
                let recent: Vec<f64> = trace[trace.len() - w..]
                    .iter()
                    .map(|s| s.validation_loss.expect("validation present"))
                    .collect();
                let median = windowed_medians(&recent, w)[0];
                if median < best_median {
                    best_median = median;
                    best_epoch = epoch;
                } else if epoch - best_epoch >= w {
                    stopped_early = epoch < config.epochs;
                    break;
                }
            }
        }
    }
    model.provenance.seed = config.seed;
    model.provenance.config_digest = config.digest();
    model.provenance.epochs = trace.len();
    Ok(TrainOutcome {
        model,
        trace,
        stopped_early,
    })
}
