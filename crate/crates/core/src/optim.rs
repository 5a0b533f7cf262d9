//! AdamW with decoupled weight decay and bias-corrected moments.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamWConfig {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate >= 0.0)
            || !in_unit(self.beta1)
            || !in_unit(self.beta2)
            || !(self.epsilon > 0.0)
            || !(self.weight_decay >= 0.0)
        {
            return contract_err(format!("invalid AdamW hyperparameters {self:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to `params` using their stored gradients, then
    /// clears those gradients. The parameter list must keep the same order
    /// and lengths across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return shape_err(format!(
                "optimizer tracks {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if self.first_moment[i].len() != p.numel() {
                return shape_err(format!(
                    "parameter {i} has {} values, optimizer state has {}",
                    p.numel(),
                    self.first_moment[i].len()
                ));
            }
            if p.grad().is_none() {
                return contract_err(format!("parameter {i} has no gradient"));
            }
        }

        self.step_count += 1;
        let AdamWConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            weight_decay: wd,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = 1.0 - lr * wd;

        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                if wd != 0.0 {
                    *w *= decay;
                }
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::scalar(v);
        t.set_grad(vec![g]).unwrap();
        t
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut opt = OptimizerState::new(AdamWConfig::with_lr(0.1)).unwrap();
        let mut w = param(1.25, 0.0);
        opt.step(&mut [&mut w]).unwrap();
        assert_eq!(w.data(), &[1.25]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = OptimizerState::new(AdamWConfig::with_lr(0.1)).unwrap();
        let mut w = param(1.0, 1.0);
        opt.step(&mut [&mut w]).unwrap();
        // m̂ = v̂ = 1 so the update is lr / (1 + eps)
        assert!((w.data()[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((w.data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::with_lr(0.1)
        };
        let mut opt = OptimizerState::new(cfg).unwrap();
        let mut w = param(2.0, 0.0);
        opt.step(&mut [&mut w]).unwrap();
        assert!((w.data()[0] - 2.0 * (1.0 - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_parameter_lists_are_shape_errors() {
        let mut opt = OptimizerState::new(AdamWConfig::default()).unwrap();
        let mut a = param(1.0, 1.0);
        opt.step(&mut [&mut a]).unwrap();
        let mut big = Tensor::zeros(&[3]);
        big.set_grad(vec![0.0; 3]).unwrap();
        assert!(matches!(
            opt.step(&mut [&mut big]),
            Err(crate::error::Error::Shape(_))
        ));
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut opt = OptimizerState::new(AdamWConfig::default()).unwrap();
        let mut a = Tensor::scalar(1.0);
        assert!(opt.step(&mut [&mut a]).is_err());
    }
}
