use serde::{Deserialize, Serialize};

use super::{AutogradError, Gradients, ParamStore, Tensor};

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

/// Moment estimates for every parameter plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    fn check_layout(&self, params: &ParamStore, grads: &Gradients) -> Result<(), AutogradError> {
        if self.first_moment.len() != params.len()
            || self.second_moment.len() != params.len()
            || grads.len() != params.len()
        {
            return Err(AutogradError::GradientLayout {
                expected: params.len(),
                found: grads.len().min(self.first_moment.len()),
            });
        }
        for (id, _, p) in params.iter() {
            let i = id.index();
            for other in [grads.get(id), &self.first_moment[i], &self.second_moment[i]] {
                if other.shape() != p.shape() {
                    return Err(AutogradError::ShapeMismatch {
                        op: "adam_step",
                        left: p.shape().to_vec(),
                        right: other.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<(), AutogradError> {
    state.check_layout(params, grads)?;
    state.step_count += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads.get(id).data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let p = params.get_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
