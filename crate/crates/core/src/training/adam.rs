//! Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8 by default).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<P: ParamSet> {
    pub config: AdamConfig,
    pub first_moment: P,
    pub second_moment: P,
    pub steps: u64,
}

impl<P: ParamSet> Adam<P> {
    pub fn new(params: &P, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            steps: 0,
        }
    }

    /// One update. Non-finite gradients are rejected before anything changes.
    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        let g_all: Vec<&Tensor> = grads.tensors().into_iter().map(|(_, t)| t).collect();
        let ms = self.first_moment.tensors_mut();
        let vs = self.second_moment.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(ms).zip(vs) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

impl ParamSet for Tensor {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("value".into(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![self]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.first_moment.data = vec![0.5, 0.5];
        adam.second_moment.data = vec![0.25, 0.25];
        let g = Tensor::zeros(&[2]);
        let before = p.clone();
        adam.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(adam.first_moment.data, vec![0.45, 0.45]);
        assert!((adam.second_moment.data[0] - 0.24975).abs() < 1e-15);
        // moments were nonzero so the parameters move by the decayed momentum
        assert!(p.data[0] < before.data[0]);

        let mut q = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let mut fresh = Adam::new(&q, AdamConfig::default());
        fresh.step(&mut q, &Tensor::zeros(&[1]), 0.1).unwrap();
        assert_eq!(q.data, vec![3.0]);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut adam = Adam::new(&p, AdamConfig::default());
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        adam.step(&mut p, &g, 1e-3).unwrap();
        assert!((p.data[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        // bias correction at t = 1 makes m̂ = g
        assert!((adam.first_moment.data[0] / (1.0 - 0.9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut adam = Adam::new(&p, AdamConfig::default());
        let g = Tensor::from_vec(&[1], vec![f64::NAN]).unwrap();
        assert!(adam.step(&mut p, &g, 1e-3).is_err());
        assert_eq!(adam.steps, 0);
        assert_eq!(p.data[0], 0.0);
    }
}
