use serde::{Deserialize, Serialize};

use super::{AutodiffError, GradSet, ParamSet};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: ParamSet,
    second_moment: ParamSet,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ParamSet, grads: &GradSet, state: &mut AdamState) -> Result<(), AutodiffError> {
    if !params.same_layout(grads.as_params()) || !params.same_layout(&state.first_moment) {
        return Err(AutodiffError::LayoutMismatch);
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for id in params.ids().collect::<Vec<_>>() {
        let g = grads.value(id).as_slice();
        let m = state.first_moment.value_mut(id).as_mut_slice();
        for (m, &g) in m.iter_mut().zip(g) {
            *m = beta1 * *m + (1.0 - beta1) * g;
        }
        let v = state.second_moment.value_mut(id).as_mut_slice();
        for (v, &g) in v.iter_mut().zip(g) {
            *v = beta2 * *v + (1.0 - beta2) * g * g;
        }
        if learning_rate == 0.0 {
            continue;
        }
        let m = state.first_moment.value(id).as_slice();
        let v = state.second_moment.value(id).as_slice();
        let p = params.value_mut(id).as_mut_slice();
        for ((p, &m), &v) in p.iter_mut().zip(m).zip(v) {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
