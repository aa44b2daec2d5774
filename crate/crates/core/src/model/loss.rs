//! Per-row losses with their gradient w.r.t. the logits.
//!
//! Batch gradients w.r.t. head parameters follow from
//! [`HeadGrad::accumulate`](super::HeadGrad::accumulate).

use crate::numerics::{logsumexp_unchecked, norm, softmax_unchecked};

/// Offset added to the logit norm before dividing, as in the original
/// LogitNorm formulation.
pub const LOGIT_NORM_EPS: f64 = 1e-7;

/// `lse(l) - l_y`; gradient `softmax(l) - onehot(y)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let loss = logsumexp_unchecked(logits, 1.0) - logits[label];
    let mut g = softmax_unchecked(logits, 1.0);
    g[label] -= 1.0;
    (loss, g)
}

/// Cross-entropy on `l / (tau * (||l|| + eps))`.
pub fn logitnorm_cross_entropy(logits: &[f64], label: usize, tau: f64) -> (f64, Vec<f64>) {
    let n = norm(logits);
    let denom = tau * (n + LOGIT_NORM_EPS);
    let scaled: Vec<f64> = logits.iter().map(|l| l / denom).collect();
    let (loss, gs) = cross_entropy(&scaled, label);
    // d(l_i / denom)/d l_j = delta_ij / denom - l_i l_j / (tau (n+eps)^2 n)
    let proj: f64 = logits.iter().zip(&gs).map(|(l, g)| l * g).sum();
    let coef = if n > 0.0 {
        proj / (tau * (n + LOGIT_NORM_EPS).powi(2) * n)
    } else {
        0.0
    };
    let g = logits.iter().zip(&gs).map(|(l, g)| g / denom - l * coef).collect();
    (loss, g)
}

/// `T^2 * KL(softmax(old/T) || softmax(new[..C_old]/T))`. The gradient has
/// the length of `new_logits` and is zero on classes the old head lacked.
pub fn distillation_kl(new_logits: &[f64], old_logits: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let c_old = old_logits.len();
    let p = softmax_unchecked(old_logits, temperature);
    let q = softmax_unchecked(&new_logits[..c_old], temperature);
    let loss = temperature
        * temperature
        * p.iter()
            .zip(&q)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
            .sum::<f64>();
    let mut g = vec![0.0; new_logits.len()];
    for j in 0..c_old {
        g[j] = temperature * (q[j] - p[j]);
    }
    (loss, g)
}

/// `E(x) = -tau * log sum_j exp(l_j / tau)`. Low for confident predictions.
pub fn energy(logits: &[f64], tau: f64) -> f64 {
    -logsumexp_unchecked(logits, tau)
}

/// `dE/dl = -softmax(l / tau)`.
pub fn energy_grad(logits: &[f64], tau: f64) -> Vec<f64> {
    softmax_unchecked(logits, tau).into_iter().map(|p| -p).collect()
}

/// T2FNorm feature map `z / (||z|| * tau)`; the zero vector maps to itself.
pub fn feature_normalize(z: &[f64], tau: f64) -> Vec<f64> {
    let n = norm(z);
    if n == 0.0 {
        return z.to_vec();
    }
    z.iter().map(|v| v / (n * tau)).collect()
}

/// Vector-Jacobian product of [`feature_normalize`].
pub fn feature_normalize_backprop(z: &[f64], tau: f64, grad_out: &[f64]) -> Vec<f64> {
    let n = norm(z);
    if n == 0.0 {
        return grad_out.to_vec();
    }
    let proj: f64 = z.iter().zip(grad_out).map(|(a, b)| a * b).sum();
    z.iter()
        .zip(grad_out)
        .map(|(zi, gi)| (gi / n - zi * proj / (n * n * n)) / tau)
        .collect()
}
