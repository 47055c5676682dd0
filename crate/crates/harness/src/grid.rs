//! Hyperparameter search for the β-VAE's β and the R-VAE's ρ.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rosetta_core::linalg::Matrix;
use rosetta_core::vae::{
    effective_rho, elbo_loss, rosetta_penalty, standard_normal_matrix, Architecture, ModelState, RosettaSet, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, Method};
use crate::runner::{method_config, run_batch, MethodSettings, RunSpec};
use crate::HarnessError;

/// One trained grid point; `score` is `None` when training diverged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub value: f64,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub beta: Vec<GridCell>,
    pub rho: Vec<GridCell>,
    pub beta_star: f64,
    pub rho_star: f64,
}

/// Lowest score wins; ties go to the smaller value. Failed cells are skipped.
pub fn select_best(cells: &[GridCell]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for c in cells {
        let Some(s) = c.score else { continue };
        best = match best {
            Some((bs, bv)) if s > bs || (s == bs && c.value >= bv) => Some((bs, bv)),
            _ => Some((s, c.value)),
        };
    }
    best.map(|(_, v)| v)
}

/// Validation score shared by every cell: the β = 1 negative ELBO on the
/// validation rows with fixed noise, plus, when an anchor set is given, its
/// penalty at unit ρ with the same batch weighting used in training.
pub fn validation_score(
    model: &ModelState,
    validation: &Matrix,
    noise: &Matrix,
    rosetta: Option<&RosettaSet>,
    base: &TrainConfig,
) -> Result<f64, HarnessError> {
    let mut score = elbo_loss(model, validation, 1.0, noise)?.value();
    if let Some(rs) = rosetta {
        let unit = TrainConfig { rho: 1.0, ..base.clone() };
        score += effective_rho(&unit, rs.len()) * rosetta_penalty(model, rs)?;
    }
    Ok(score)
}

fn score_cells(
    method: Method,
    values: &[f64],
    arch: &Architecture,
    data: &Matrix,
    validation: &Matrix,
    rosetta: &RosettaSet,
    base: &TrainConfig,
    seed: u64,
) -> Result<Vec<GridCell>, HarnessError> {
    let noise = standard_normal_matrix(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), validation.rows(), arch.latent_dim);
    let specs: Vec<RunSpec<'_>> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let settings = MethodSettings {
                beta_vae_beta: v,
                r_vae_rho: v,
            };
            RunSpec {
                method,
                run: i,
                config: method_config(method, base, &settings, seed),
                init_seed: seed,
                arch: arch.clone(),
                data,
                validation: None,
                rosetta: Some(rosetta),
                eval: validation,
            }
        })
        .collect();
    let (results, _) = run_batch(&specs, None)?;
    let penalty_set = method.uses_penalty().then_some(rosetta);
    values
        .iter()
        .zip(results)
        .map(|(&value, r)| {
            let score = match r {
                Some(r) => match validation_score(&r.model, validation, &noise, penalty_set, base) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        warn!("{method} grid cell {value} not scorable: {e}");
                        None
                    }
                },
                None => None,
            };
            Ok(GridCell { value, score })
        })
        .collect()
}

/// Trains `grid.epochs`-epoch models over the β grid (β-VAE) and the ρ grid
/// (R-VAE) independently and picks the best value of each.
pub fn grid_search(
    arch: &Architecture,
    data: &Matrix,
    validation: &Matrix,
    rosetta: &RosettaSet,
    base: &TrainConfig,
    grid: &GridSpec,
    seed: u64,
) -> Result<GridResult, HarnessError> {
    let short = TrainConfig {
        epochs: grid.epochs,
        plateau_window: None,
        ..base.clone()
    };
    let beta = score_cells(Method::BetaVae, &grid.beta.values(), arch, data, validation, rosetta, &short, seed)?;
    let rho = score_cells(Method::RVae, &grid.rho.values(), arch, data, validation, rosetta, &short, seed)?;
    let beta_star = select_best(&beta).ok_or_else(|| HarnessError::Protocol("every β grid cell failed".into()))?;
    let rho_star = select_best(&rho).ok_or_else(|| HarnessError::Protocol("every ρ grid cell failed".into()))?;
    info!("grid search selected beta={beta_star} rho={rho_star}");
    Ok(GridResult {
        beta,
        rho,
        beta_star,
        rho_star,
    })
}

/// Grid cells as CSV: `parameter,value,score`.
pub fn grid_csv(result: &GridResult) -> String {
    let mut out = String::from("parameter,value,score\n");
    for (name, cells) in [("beta", &result.beta), ("rho", &result.rho)] {
        for c in cells.iter() {
            let score = c.score.map_or_else(|| "failed".to_string(), |s| format!("{s:.17e}"));
            out.push_str(&format!("{name},{},{score}\n", c.value));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GridRange;

    fn cells(scores: &[(f64, Option<f64>)]) -> Vec<GridCell> {
        scores.iter().map(|&(value, score)| GridCell { value, score }).collect()
    }

    #[test]
    fn single_cell_is_selected() {
        assert_eq!(select_best(&cells(&[(2.5, Some(10.0))])), Some(2.5));
    }

    #[test]
    fn unique_minimum_wins() {
        let c = cells(&[(0.0, Some(5.0)), (0.75, Some(3.0)), (1.5, Some(1.0)), (2.25, Some(4.0))]);
        assert_eq!(select_best(&c), Some(1.5));
    }

    #[test]
    fn ties_go_to_smaller_value() {
        let c = cells(&[(5.0, Some(1.0)), (2.5, Some(1.0)), (7.5, Some(1.0))]);
        assert_eq!(select_best(&c), Some(2.5));
    }

    #[test]
    fn failed_cells_are_skipped() {
        let c = cells(&[(0.0, None), (0.75, Some(9.0)), (1.5, None)]);
        assert_eq!(select_best(&c), Some(0.75));
        assert_eq!(select_best(&cells(&[(0.0, None)])), None);
    }

    #[test]
    fn bracket_cardinalities() {
        assert_eq!(GridRange::new(0.0, 2.5, 25.0).values().len(), 11);
        let rho = GridRange::new(0.0, 0.75, 15.0).values();
        assert_eq!(rho.len(), 21);
        assert_eq!(rho[20], 15.0);
        assert_eq!(GridRange::new(1.0, 0.0, 3.0).values(), vec![1.0]);
    }

    #[test]
    fn csv_marks_failures() {
        let r = GridResult {
            beta: cells(&[(0.0, Some(1.5))]),
            rho: cells(&[(0.0, None)]),
            beta_star: 0.0,
            rho_star: 0.0,
        };
        let csv = grid_csv(&r);
        assert!(csv.contains("beta,0,1.5"));
        assert!(csv.ends_with("rho,0,failed\n"));
    }
}
