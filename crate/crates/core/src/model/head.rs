use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::extractor::fnv;
use crate::error::{Error, Result};
use crate::numerics::{norm, RngStream};

const MAGIC: &[u8; 4] = b"OCH1";

/// How rows for newly added classes are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadInit {
    Zeros,
    /// Each new row is `scale` times the mean of the existing rows (zeros
    /// when the head is empty); new biases copy the mean bias.
    CopyScaled {
        scale: f64,
    },
    /// Uniform in `[-1/sqrt(d), 1/sqrt(d)]` for weights and biases.
    #[default]
    SeededUniform,
}

/// Expandable linear classifier `W x + b` over the seen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradient with the same layout as a [`LinearHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &LinearHead) -> Self {
        Self {
            weights: vec![0.0; head.weights.len()],
            bias: vec![0.0; head.bias.len()],
        }
    }

    /// Add `scale * dlogits ⊗ input` (the chain rule through `W x + b`).
    #[inline]
    pub fn accumulate(&mut self, input: &[f64], dlogits: &[f64], scale: f64) {
        let d = input.len();
        for (c, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let g = g * scale;
            self.bias[c] += g;
            for (w, x) in self.weights[c * d..(c + 1) * d].iter_mut().zip(input) {
                *w += g * x;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &HeadGrad, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }
}

impl LinearHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn from_parts(classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * dim {
            return Err(Error::DimensionMismatch {
                expected: classes * dim,
                got: weights.len(),
            });
        }
        if bias.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: bias.len(),
            });
        }
        Ok(Self {
            classes,
            dim,
            weights,
            bias,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    #[inline]
    pub fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| self.bias[c] + self.row(c).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Append `new_classes` rows. Existing rows are copied bit-for-bit.
    pub fn expand(&self, new_classes: usize, init: HeadInit, rng: &RngStream) -> LinearHead {
        let mut out = self.clone();
        out.classes += new_classes;
        match init {
            HeadInit::Zeros => {
                out.weights.resize(out.classes * self.dim, 0.0);
                out.bias.resize(out.classes, 0.0);
            }
            HeadInit::CopyScaled { scale } => {
                let (mut mean_row, mut mean_bias) = (vec![0.0; self.dim], 0.0);
                if self.classes > 0 {
                    for c in 0..self.classes {
                        for (m, w) in mean_row.iter_mut().zip(self.row(c)) {
                            *m += w / self.classes as f64;
                        }
                    }
                    mean_bias = self.bias.iter().sum::<f64>() / self.classes as f64;
                }
                for _ in 0..new_classes {
                    out.weights.extend(mean_row.iter().map(|w| w * scale));
                    out.bias.push(mean_bias);
                }
            }
            HeadInit::SeededUniform => {
                let bound = 1.0 / (self.dim.max(1) as f64).sqrt();
                let mut r = rng.rng();
                for _ in 0..new_classes * self.dim {
                    out.weights.push(r.random_range(-bound..=bound));
                }
                for _ in 0..new_classes {
                    out.bias.push(r.random_range(-bound..=bound));
                }
            }
        }
        out
    }

    /// Rescale the rows of `new_ids` so their mean L2 norm matches that of
    /// `old_ids`. Biases are untouched. Returns the applied factor.
    pub fn weight_align(&mut self, old_ids: &[usize], new_ids: &[usize]) -> Result<f64> {
        if old_ids.is_empty() || new_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&c) = old_ids.iter().chain(new_ids).find(|&&c| c >= self.classes) {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                got: c + 1,
            });
        }
        let mean_norm = |ids: &[usize]| ids.iter().map(|&c| norm(self.row(c))).sum::<f64>() / ids.len() as f64;
        let (old, new) = (mean_norm(old_ids), mean_norm(new_ids));
        if old == 0.0 || new == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let gamma = old / new;
        for &c in new_ids {
            for w in &mut self.weights[c * self.dim..(c + 1) * self.dim] {
                *w *= gamma;
            }
        }
        Ok(gamma)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = fnv(self.classes as u64, fnv(self.dim as u64, 0xcbf2_9ce4_8422_2325));
        for v in self.weights.iter().chain(&self.bias) {
            h = fnv(v.to_bits(), h);
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic, expected OCH1".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let (classes, dim) = (word(4), word(8));
        let expected = 12 + 8 * (classes * dim + classes);
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes for {classes}x{dim}, found {}",
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (w, b) = vals.split_at(classes * dim);
        Self::from_parts(classes, dim, w.to_vec(), b.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_head(classes: usize, dim: usize, seed: u64) -> LinearHead {
        LinearHead::zeros(0, dim).expand(classes, HeadInit::SeededUniform, &RngStream::new(seed, "h"))
    }

    #[test]
    fn forward_examples() {
        let eye = LinearHead::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(eye.forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let bias_only = LinearHead::from_parts(2, 3, vec![0.0; 6], vec![1.0, -1.0]).unwrap();
        assert_eq!(bias_only.forward(&[7.0, -2.0, 9.0]).unwrap(), vec![1.0, -1.0]);
        assert!(eye.forward(&[1.0]).is_err());
    }

    #[test]
    fn forward_matches_triple_loop() {
        let head = random_head(3, 2, 1);
        let xs = [[0.3, -1.2], [2.0, 0.5], [-0.7, 0.0]];
        for x in xs {
            let mut naive = vec![0.0; 3];
            for (i, out) in naive.iter_mut().enumerate() {
                *out = head.bias()[i];
                for (j, xj) in x.iter().enumerate() {
                    *out += head.weights()[i * 2 + j] * xj;
                }
            }
            for (a, b) in head.forward(&x).unwrap().iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expand_preserves_old_rows() {
        let fresh = LinearHead::zeros(0, 4).expand(3, HeadInit::SeededUniform, &RngStream::new(0, "a"));
        assert_eq!(fresh.classes(), 3);
        let x = [0.1, 0.2, -0.3, 0.4];
        let before = fresh.forward(&x).unwrap();
        for init in [
            HeadInit::Zeros,
            HeadInit::SeededUniform,
            HeadInit::CopyScaled { scale: 0.5 },
        ] {
            let grown = fresh.expand(2, init, &RngStream::new(1, "b"));
            assert_eq!(grown.classes(), 5);
            assert_eq!(&grown.weights()[..12], fresh.weights());
            assert_eq!(&grown.bias()[..3], fresh.bias());
            assert_eq!(&grown.forward(&x).unwrap()[..3], before.as_slice());
        }
        let zeros = fresh.expand(2, HeadInit::Zeros, &RngStream::new(1, "b"));
        assert_eq!(&zeros.forward(&x).unwrap()[3..], &[0.0, 0.0]);
    }

    #[test]
    fn weight_align_cases() {
        let mut same = LinearHead::from_parts(2, 2, vec![3.0, 4.0, 0.0, 5.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(same.weight_align(&[0], &[1]).unwrap(), 1.0);
        assert_eq!(same.row(1), &[0.0, 5.0]);

        let mut double = LinearHead::from_parts(2, 2, vec![1.0, 0.0, 0.0, 2.0], vec![0.5, 0.5]).unwrap();
        double.weight_align(&[0], &[1]).unwrap();
        assert_eq!(double.row(1), &[0.0, 1.0]);
        assert_eq!(double.bias(), &[0.5, 0.5]);

        let mut zero = LinearHead::zeros(2, 2);
        assert!(zero.weight_align(&[0], &[1]).is_err());
        assert!(zero.weight_align(&[], &[1]).is_err());
    }

    #[test]
    fn weight_align_matches_recomputed_norms() {
        for seed in 0..20 {
            let mut head = random_head(6, 5, seed);
            let (old, new) = ([0, 1, 2, 3], [4, 5]);
            head.weight_align(&old, &new).unwrap();
            let mean = |ids: &[usize]| {
                ids.iter()
                    .map(|&c| head.row(c).iter().map(|w| w * w).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / ids.len() as f64
            };
            assert!((mean(&old) - mean(&new)).abs() < 1e-10);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let head = random_head(4, 3, 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.och");
        head.save(&p).unwrap();
        assert_eq!(LinearHead::load(&p).unwrap(), head);
        let bytes = head.to_bytes();
        assert_eq!(bytes.len(), 12 + 8 * (12 + 4));
        assert!(LinearHead::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(LinearHead::from_bytes(b"NOPE").is_err());
    }
}
