use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{powi, sqrt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier applied to the learning rate every `decay_epochs` epochs.
    pub decay: f64,
    pub decay_epochs: usize,
    /// Optimizer steps per epoch; 0 disables the schedule.
    pub epoch_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.1,
            decay_epochs: 3,
            epoch_steps: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay > 0.0
            && self.decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("invalid Adam configuration"))
        }
    }

    /// Learning rate in effect after `step` completed updates.
    pub fn lr_at(&self, step: usize) -> f64 {
        let period = self.epoch_steps * self.decay_epochs;
        if period == 0 {
            return self.lr;
        }
        self.lr * powi(self.decay, (step / period) as i32)
    }
}

/// Adam moments and step counter for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_with(params, grads, |_| 1.0)
    }

    /// Like [`Adam::update`] with a per-parameter learning-rate multiplier.
    pub fn update_scaled(&mut self, params: &mut [f64], grads: &[f64], scale: &[f64]) -> Result<()> {
        Error::check_len("learning-rate scales", self.m.len(), scale.len())?;
        self.step_with(params, grads, |i| scale[i])
    }

    fn step_with(&mut self, params: &mut [f64], grads: &[f64], scale: impl Fn(usize) -> f64) -> Result<()> {
        Error::check_len("parameters", self.m.len(), params.len())?;
        Error::check_len("gradients", self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let c = &self.config;
        let lr = c.lr_at(self.step);
        self.step += 1;
        let bc1 = 1.0 - powi(c.beta1, self.step as i32);
        let bc2 = 1.0 - powi(c.beta2, self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= scale(i) * lr * mh / (sqrt(vh) + c.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut a = Adam::new(3, AdamConfig::default()).unwrap();
        let mut p = vec![1.0, -2.0, 3.0];
        a.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = Adam::new(2, AdamConfig::default()).unwrap();
        let mut p = vec![0.0, 0.0];
        a.update(&mut p, &[0.5, -3.0]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10);
        assert!((p[1] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn scaled_step() {
        let mut a = Adam::new(2, AdamConfig::default()).unwrap();
        let mut p = vec![0.0, 0.0];
        a.update_scaled(&mut p, &[0.5, -3.0], &[0.01, 1.0]).unwrap();
        assert!((p[0] + 1e-5).abs() < 1e-12);
        assert!((p[1] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn schedule_decays_every_three_epochs() {
        let c = AdamConfig {
            epoch_steps: 10,
            ..AdamConfig::default()
        };
        assert_eq!(c.lr_at(29), 1e-3);
        assert!((c.lr_at(30) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(60) - 1e-5).abs() < 1e-19);
    }
}
