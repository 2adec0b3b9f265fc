//! SGD-with-momentum and Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    Adam,
}

/// Per-parameter optimizer buffers, aligned to `ParamStore` order.
#[derive(Clone, Debug)]
pub enum OptimizerState<T: Scalar> {
    SgdMomentum {
        momentum: f64,
        velocity: Vec<Vec<T>>,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        first_moment: Vec<Vec<T>>,
        second_moment: Vec<Vec<T>>,
    },
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, params: &ParamStore<T>, cfg: &OptimizerHyper) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, t)| vec![T::ZERO; t.numel()]).collect();
        match kind {
            OptimizerKind::SgdMomentum => OptimizerState::SgdMomentum {
                momentum: cfg.momentum,
                velocity: zeros,
            },
            OptimizerKind::Adam => OptimizerState::Adam {
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
                step: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerState::SgdMomentum { .. } => OptimizerKind::SgdMomentum,
            OptimizerState::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// Applies one update to every parameter. `grads` must be aligned to the
    /// store's iteration order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Config(format!(
                "gradient count {} does not match parameter count {}",
                grads.len(),
                params.len()
            )));
        }
        let names: Vec<String> = params.names().map(str::to_string).collect();
        match self {
            OptimizerState::SgdMomentum { momentum, velocity } => {
                let mu = T::from_f64(*momentum);
                let lr = T::from_f64(lr);
                for (i, name) in names.iter().enumerate() {
                    let tensor = params.get_mut(name)?;
                    if grads[i].len() != tensor.numel() {
                        return Err(Error::Config(format!("gradient shape mismatch for {name}")));
                    }
                    for (j, g) in grads[i].iter().enumerate() {
                        velocity[i][j] = mu * velocity[i][j] + *g;
                        tensor.data_mut()[j] -= lr * velocity[i][j];
                    }
                }
            }
            OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                step,
                first_moment,
                second_moment,
            } => {
                *step += 1;
                let b1 = T::from_f64(*beta1);
                let b2 = T::from_f64(*beta2);
                let eps = T::from_f64(*eps);
                let lr = T::from_f64(lr);
                let correction1 = T::from_f64(1.0 - beta1.powi(*step as i32));
                let correction2 = T::from_f64(1.0 - beta2.powi(*step as i32));
                for (i, name) in names.iter().enumerate() {
                    let tensor = params.get_mut(name)?;
                    if grads[i].len() != tensor.numel() {
                        return Err(Error::Config(format!("gradient shape mismatch for {name}")));
                    }
                    for (j, g) in grads[i].iter().enumerate() {
                        let m = &mut first_moment[i][j];
                        let v = &mut second_moment[i][j];
                        *m = b1 * *m + (T::ONE - b1) * *g;
                        *v = b2 * *v + (T::ONE - b2) * *g * *g;
                        let m_hat = *m / correction1;
                        let v_hat = *v / correction2;
                        tensor.data_mut()[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Optimizer hyperparameters, shared with `TrainConfig`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        OptimizerHyper {
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single_param(value: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::new(vec![1], vec![value]).unwrap());
        store
    }

    #[test]
    fn sgd_first_step_is_plain_descent() {
        let mut store = single_param(1.0);
        let mut state =
            OptimizerState::new(OptimizerKind::SgdMomentum, &store, &OptimizerHyper::default());
        state.step(&mut store, &[vec![2.0]], 0.1).unwrap();
        assert!((store.get("theta").unwrap().data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_lr_still_updates_velocity() {
        let mut store = single_param(1.0);
        let mut state =
            OptimizerState::new(OptimizerKind::SgdMomentum, &store, &OptimizerHyper::default());
        state.step(&mut store, &[vec![2.0]], 0.0).unwrap();
        assert_eq!(store.get("theta").unwrap().data()[0], 1.0);
        match &state {
            OptimizerState::SgdMomentum { velocity, .. } => assert_eq!(velocity[0][0], 2.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn sgd_velocity_unrolls_the_recurrence() {
        // After g1 then g2 the velocity is 0.9·g1 + g2.
        let mut store = single_param(0.0);
        let mut state =
            OptimizerState::new(OptimizerKind::SgdMomentum, &store, &OptimizerHyper::default());
        state.step(&mut store, &[vec![3.0]], 0.01).unwrap();
        state.step(&mut store, &[vec![-1.0]], 0.01).unwrap();
        match &state {
            OptimizerState::SgdMomentum { velocity, .. } => {
                assert!((velocity[0][0] - (0.9 * 3.0 - 1.0)).abs() < 1e-12)
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut store = single_param(0.7);
        let mut state = OptimizerState::new(OptimizerKind::Adam, &store, &OptimizerHyper::default());
        state.step(&mut store, &[vec![0.0]], 1e-3).unwrap();
        assert_eq!(store.get("theta").unwrap().data()[0], 0.7);
    }

    #[test]
    fn adam_first_step_moves_by_about_lr() {
        // With g = 1 the bias-corrected moments are both 1 at t = 1, so the
        // update is lr / (1 + eps).
        let mut store = single_param(0.0);
        let mut state = OptimizerState::new(OptimizerKind::Adam, &store, &OptimizerHyper::default());
        state.step(&mut store, &[vec![1.0]], 1e-4).unwrap();
        let delta = store.get("theta").unwrap().data()[0];
        assert!((delta + 1e-4).abs() < 1e-8, "delta {delta}");
    }

    #[test]
    fn adam_constant_gradient_converges_to_lr_steps() {
        let mut store = single_param(0.0);
        let mut state = OptimizerState::new(OptimizerKind::Adam, &store, &OptimizerHyper::default());
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..500 {
            state.step(&mut store, &[vec![2.5]], 1e-3).unwrap();
            let now = store.get("theta").unwrap().data()[0];
            last_step = (now - prev).abs();
            prev = now;
        }
        assert!((last_step - 1e-3).abs() < 1e-6, "step size {last_step}");
    }

    #[test]
    fn mismatched_gradient_count_errors() {
        let mut store = single_param(0.0);
        let mut state = OptimizerState::new(OptimizerKind::Adam, &store, &OptimizerHyper::default());
        assert!(state.step(&mut store, &[], 1e-3).is_err());
    }
}
