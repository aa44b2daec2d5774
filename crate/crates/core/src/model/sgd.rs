use serde::{Deserialize, Serialize};

use super::head::{HeadGrad, LinearHead};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// `lr0 * 0.5 * (1 + cos(pi * step / total))`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (step.min(total) as f64) / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// SGD with momentum, coupled weight decay and a cosine schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    config: SgdConfig,
    vel_w: Vec<f64>,
    vel_b: Vec<f64>,
}

impl SgdState {
    pub fn new(config: SgdConfig, head: &LinearHead) -> Self {
        Self {
            config,
            vel_w: vec![0.0; head.weights().len()],
            vel_b: vec![0.0; head.bias().len()],
        }
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Grow the velocity buffers after the head gained rows; new rows start at zero.
    pub fn sync_shape(&mut self, head: &LinearHead) {
        self.vel_w.resize(head.weights().len(), 0.0);
        self.vel_b.resize(head.bias().len(), 0.0);
    }

    /// `v <- m v + (g + wd p)`, `p <- p - lr(step) v`. Returns the lr used.
    pub fn step(&mut self, head: &mut LinearHead, grad: &HeadGrad, step: usize, total_steps: usize) -> Result<f64> {
        if grad.weights.len() != head.weights().len() || self.vel_w.len() != head.weights().len() {
            return Err(Error::DimensionMismatch {
                expected: head.weights().len(),
                got: grad.weights.len(),
            });
        }
        if grad.bias.len() != head.bias().len() || self.vel_b.len() != head.bias().len() {
            return Err(Error::DimensionMismatch {
                expected: head.bias().len(),
                got: grad.bias.len(),
            });
        }
        let lr = cosine_lr(self.config.lr, step, total_steps);
        let SgdConfig {
            momentum, weight_decay, ..
        } = self.config;
        let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = momentum * *v + (g + weight_decay * *p);
                *p -= lr * *v;
            }
        };
        update(head.weights_mut(), &mut self.vel_w, &grad.weights);
        update(head.bias_mut(), &mut self.vel_b, &grad.bias);
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_head(w: f64) -> LinearHead {
        LinearHead::from_parts(1, 1, vec![w], vec![0.0]).unwrap()
    }

    fn grad(g: f64) -> HeadGrad {
        HeadGrad {
            weights: vec![g],
            bias: vec![0.0],
        }
    }

    #[test]
    fn vanilla_gradient_descent() {
        let cfg = SgdConfig {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut head = scalar_head(2.0);
        let mut sgd = SgdState::new(cfg, &head);
        // total = 0 disables the schedule.
        sgd.step(&mut head, &grad(1.0), 3, 0).unwrap();
        assert_eq!(head.weights(), &[1.5]);
    }

    #[test]
    fn schedule_endpoints_and_monotone() {
        assert_eq!(cosine_lr(0.1, 0, 50), 0.1);
        assert!(cosine_lr(0.1, 50, 50).abs() < 1e-18);
        let lrs: Vec<f64> = (0..=50).map(|s| cosine_lr(0.1, s, 50)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn momentum_matches_hand_unroll() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let mut head = scalar_head(1.0);
        let mut sgd = SgdState::new(cfg, &head);
        sgd.step(&mut head, &grad(0.5), 0, 4).unwrap();
        sgd.step(&mut head, &grad(-0.2), 1, 4).unwrap();

        let (lr0, lr1) = (0.1, 0.1 * 0.5 * (1.0 + (std::f64::consts::PI / 4.0).cos()));
        let v1 = 0.5 + 0.01 * 1.0;
        let p1 = 1.0 - lr0 * v1;
        let v2 = 0.9 * v1 + (-0.2 + 0.01 * p1);
        let p2 = p1 - lr1 * v2;
        assert!((head.weights()[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn shape_checks_and_sync() {
        let head = LinearHead::zeros(2, 3);
        let mut sgd = SgdState::new(SgdConfig::default(), &head);
        let bad = HeadGrad {
            weights: vec![0.0; 3],
            bias: vec![0.0; 1],
        };
        assert!(sgd.step(&mut head.clone(), &bad, 0, 10).is_err());

        let mut grown = head.expand(
            1,
            super::super::HeadInit::Zeros,
            &crate::numerics::RngStream::new(0, "x"),
        );
        let g = HeadGrad::zeros_like(&grown);
        assert!(sgd.step(&mut grown, &g, 0, 10).is_err());
        sgd.sync_shape(&grown);
        sgd.step(&mut grown, &g, 0, 10).unwrap();
    }
}
