//! Adam with decoupled weight decay and a cosine learning-rate schedule
//! with linear warmup.

use crate::error::{Error, Result};
use crate::math;
use crate::params::{ParamId, Params};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &Params) -> Self {
        let m = params.iter().map(|(_, e)| vec![0.0; e.data.len()]).collect();
        let v = params.iter().map(|(_, e)| vec![0.0; e.data.len()]).collect();
        Adam { cfg, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter carrying a gradient, at the given
    /// learning rate. Weight decay is decoupled from the moments.
    pub fn step(&mut self, params: &mut Params, lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - math::powf(b1, self.t as f64);
        let bc2 = 1.0 - math::powf(b2, self.t as f64);
        let ids: Vec<ParamId> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let Some(grad) = params.grad(id).map(|g| g.to_vec()) else { continue };
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            if m.len() != grad.len() {
                return Err(Error::BadShape { expected: m.len(), got: grad.len() });
            }
            let data = params.data_mut(id);
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * (m_hat / (math::sqrt(v_hat) + self.cfg.eps)
                    + self.cfg.weight_decay * data[i]);
            }
        }
        Ok(())
    }

    /// Moment buffers for one parameter (checkpointing).
    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        (&self.m[id.0], &self.v[id.0])
    }

    /// Restore moment buffers and step counter (checkpoint resume).
    pub fn restore(&mut self, id: ParamId, m: &[f64], v: &[f64]) -> Result<()> {
        if self.m[id.0].len() != m.len() || self.v[id.0].len() != v.len() {
            return Err(Error::BadShape { expected: self.m[id.0].len(), got: m.len() });
        }
        self.m[id.0].copy_from_slice(m);
        self.v[id.0].copy_from_slice(v);
        Ok(())
    }

    pub fn set_step_count(&mut self, t: u64) {
        self.t = t;
    }
}

/// Linear warmup to `base`, then cosine decay to zero over the remaining
/// steps. `step` is zero-based.
pub fn cosine_warmup_lr(base: f64, warmup: usize, total: usize, step: usize) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    if total <= warmup || step >= total {
        return if step >= total { 0.0 } else { base };
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    base * 0.5 * (1.0 + math::cos(math::PI * progress))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Params, WEIGHT_INIT};
    use crate::tape::Tape;

    #[test]
    fn single_step_matches_hand_computation() {
        let mut params = Params::new(1);
        let w = params.create("w", 1, 2, WEIGHT_INIT).unwrap();
        let w0 = params.data(w).to_vec();

        // loss = sum(w): gradient is all ones.
        let mut tape = Tape::new();
        let wv = tape.param(&params, w);
        let loss = tape.sum_all(wv).unwrap();
        tape.backward(loss, &mut params).unwrap();

        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, 0.1).unwrap();

        // First Adam step with g = 1: m_hat = 1, v_hat = 1,
        // delta = lr / (1 + eps).
        let expect = 0.1 / (1.0 + 1e-8);
        for (a, b) in params.data(w).iter().zip(&w0) {
            assert!((a - (b - expect)).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_pulls_weights_toward_zero_without_gradient_via_grad_zero() {
        let mut params = Params::new(2);
        let w = params.create("w", 1, 1, WEIGHT_INIT).unwrap();
        let before = params.data(w)[0];
        // Zero gradient still applies decoupled decay.
        params.set_grad(w, alloc::vec![0.0]);
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.5, ..AdamConfig::default() }, &params);
        adam.step(&mut params, 0.1).unwrap();
        let after = params.data(w)[0];
        assert!((after - before * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn params_without_grads_are_untouched() {
        let mut params = Params::new(3);
        let w = params.create("w", 2, 2, WEIGHT_INIT).unwrap();
        let before = params.data(w).to_vec();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, 1.0).unwrap();
        assert_eq!(params.data(w), &before[..]);
    }

    #[test]
    fn schedule_shape() {
        let base = 1e-3;
        // Warmup is linear and ends at base.
        assert!((cosine_warmup_lr(base, 10, 100, 0) - base * 0.1).abs() < 1e-18);
        assert!((cosine_warmup_lr(base, 10, 100, 9) - base).abs() < 1e-18);
        // Midpoint of the cosine leg is base/2.
        assert!((cosine_warmup_lr(base, 10, 100, 55) - base * 0.5).abs() < 1e-9);
        // Monotone decay after warmup.
        let mut prev = f64::INFINITY;
        for s in 10..100 {
            let lr = cosine_warmup_lr(base, 10, 100, s);
            assert!(lr <= prev);
            prev = lr;
        }
        assert_eq!(cosine_warmup_lr(base, 10, 100, 100), 0.0);
        // No-warmup config starts at full rate.
        assert!((cosine_warmup_lr(base, 0, 10, 0) - base).abs() < 1e-18);
    }
}
