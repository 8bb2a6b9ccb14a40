use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(TrainError::Config(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(TrainError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// RMSprop with one running mean-square accumulator per parameter element.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: RmsPropConfig,
    accumulators: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl OptimizerState {
    pub fn new(config: RmsPropConfig, shapes: &[Vec<usize>]) -> Self {
        Self {
            config,
            accumulators: shapes
                .iter()
                .map(|s| vec![0.0; s.iter().product()])
                .collect(),
            shapes: shapes.to_vec(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// `v ← ρ·v + (1−ρ)·g²`, `θ ← θ − lr·g / (√v + ε)`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), TrainError> {
        if params.len() != self.shapes.len() || grads.len() != self.shapes.len() {
            return Err(TrainError::Optimizer(format!(
                "expected {} parameters and gradients, got {} and {}",
                self.shapes.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, shape) in self.shapes.iter().enumerate() {
            if params[i].shape() != shape.as_slice() || grads[i].shape() != shape.as_slice() {
                return Err(TrainError::Optimizer(format!(
                    "parameter {i}: expected shape {shape:?}, got {:?} with gradient {:?}",
                    params[i].shape(),
                    grads[i].shape()
                )));
            }
        }
        let RmsPropConfig {
            learning_rate: lr,
            rho,
            epsilon,
        } = self.config;
        for ((param, grad), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulators) {
            for ((p, &g), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(acc.iter_mut())
            {
                let g = g as f64;
                *v = rho * *v + (1.0 - rho) * g * g;
                *p = (*p as f64 - lr * g / (v.sqrt() + epsilon)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(g: f32) -> (OptimizerState, Tensor, Tensor) {
        let st = OptimizerState::new(RmsPropConfig::default(), &[vec![1]]);
        (st, Tensor::scalar(0.0), Tensor::scalar(g))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut st, mut p, g) = one_param(0.0);
        p.data_mut()[0] = 0.7;
        st.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p.data()[0], 0.7);
    }

    #[test]
    fn single_step_by_hand() {
        let (mut st, mut p, g) = one_param(1.0);
        st.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        assert!((st.accumulators()[0][0] - 0.1).abs() < 1e-12);
        let expected = -1e-3 / (0.1f64.sqrt() + 1e-7);
        assert!((p.data()[0] as f64 - expected).abs() < 1e-8);
        assert!((expected + 0.003162).abs() < 1e-6);

        let before = p.data()[0] as f64;
        st.step(&mut [&mut p], &[g]).unwrap();
        assert!((st.accumulators()[0][0] - 0.19).abs() < 1e-12);
        let second = p.data()[0] as f64 - before;
        assert!(second.abs() < expected.abs());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = OptimizerState::new(RmsPropConfig::default(), &[vec![2]]);
        let mut p = Tensor::zeros(&[2]);
        assert!(st.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn config_bounds() {
        let base = RmsPropConfig::default();
        assert!(RmsPropConfig {
            learning_rate: 0.0,
            ..base
        }
        .validate()
        .is_ok());
        assert!(RmsPropConfig { rho: 1.0, ..base }.validate().is_err());
        assert!(RmsPropConfig {
            epsilon: 0.0,
            ..base
        }
        .validate()
        .is_err());
    }
}
