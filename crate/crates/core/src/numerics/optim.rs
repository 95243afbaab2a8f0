use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One bias-corrected Adam update of `param` in place. `step` is the
/// 1-based step count after increment.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if grad.len() != param.len() {
        return Err(Error::shape("adam_step", &[param.len()], &[grad.len()]));
    }
    if moments.m.is_empty() {
        moments.m = vec![0.0; param.len()];
        moments.v = vec![0.0; param.len()];
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = moments.m[i] / bc1;
        let v_hat = moments.v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a set of named parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        Ok(Adam {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    /// Starts a new optimizer step; call before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if self.step == 0 {
            return Err(Error::Structure("Adam::update before begin_step".into()));
        }
        let moments = self.moments.entry(name.to_string()).or_default();
        adam_step(param, grad, moments, self.step, &self.cfg)
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut p = vec![1.0, -2.0];
        let g = vec![0.0, 0.0];
        adam.begin_step();
        adam.update("p", &mut p, &g).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut p = vec![0.5, 0.5, 0.5];
        let g = vec![3.0, -0.02, 1e-3];
        let mut m = Moments::default();
        adam_step(&mut p, &g, &mut m, 1, &cfg).unwrap();
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+eps).
        for (pi, gi) in p.iter().zip(&g) {
            let want = 0.5 - cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - want).abs() < 1e-15);
            assert!((pi - (0.5 - cfg.lr * gi.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::default()).unwrap();
            let mut p = vec![0.1, 0.2, 0.3];
            for s in 0..5 {
                let g: Vec<f64> = p.iter().map(|v| v * (s as f64 + 1.0)).collect();
                adam.begin_step();
                adam.update("w", &mut p, &g).unwrap();
            }
            (p, adam.moments("w").cloned())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_non_positive_lr() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(cfg).is_err());
        let mut m = Moments::default();
        assert!(adam_step(&mut [0.0], &[1.0], &mut m, 1, &cfg).is_err());
    }
}
