//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{GradSet, ParamSet};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// One coordinate that disagreed with its finite-difference estimate.
#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Summary of a [`check_gradients`] run.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub mismatches: Vec<GradMismatch>,
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }
}

/// Allowed deviation: `max(1e-6, 1e-4·|grad|)`.
pub fn tolerance(analytic: f64) -> f64 {
    (1e-4 * analytic.abs()).max(1e-6)
}

/// Compares `grads` with central differences of `loss` on `samples`
/// uniformly drawn scalar coordinates (all of them if fewer exist).
pub fn check_gradients<R: Rng>(
    params: &ParamSet,
    grads: &GradSet,
    samples: usize,
    rng: &mut R,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> GradCheckReport {
    let mut coords = Vec::new();
    for (pi, (_, m)) in params.iter().enumerate() {
        coords.extend((0..m.as_slice().len()).map(|k| (pi, k)));
    }
    let picks: Vec<usize> = if coords.len() <= samples {
        (0..coords.len()).collect()
    } else {
        let mut p = sample(rng, coords.len(), samples).into_vec();
        p.sort_unstable();
        p
    };
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    let ids: Vec<_> = params.ids().collect();
    for pick in picks {
        let (pi, k) = coords[pick];
        let id = ids[pi];
        let orig = params.value(id).as_slice()[k];
        probe.value_mut(id).as_mut_slice()[k] = orig + FD_STEP;
        let up = loss(&probe);
        probe.value_mut(id).as_mut_slice()[k] = orig - FD_STEP;
        let down = loss(&probe);
        probe.value_mut(id).as_mut_slice()[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.value(id).as_slice()[k];
        let err = (numeric - analytic).abs();
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(err);
        if !(err <= tolerance(analytic)) {
            report.mismatches.push(GradMismatch {
                param: params.name(id).to_string(),
                index: k,
                analytic,
                numeric,
            });
        }
    }
    report
}
