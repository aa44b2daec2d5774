use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numerics::{standard_normal, RngStream};

/// Configuration form of an [`Extractor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorSpec {
    #[default]
    Identity,
    /// Elementwise `max(0, x)`.
    Relu,
    RandomProjection {
        d_out: usize,
        seed: u64,
        #[serde(default)]
        relu: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Identity,
    /// `d_out x d_in`, entries `N(0, 1/d_out)`.
    Projection(Matrix),
}

/// Frozen feature map in front of the trainable head. Never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    d_in: usize,
    kind: Kind,
    relu: bool,
}

impl Extractor {
    pub fn identity(dim: usize) -> Self {
        Self {
            d_in: dim,
            kind: Kind::Identity,
            relu: false,
        }
    }

    /// Follow the linear map with `max(0, .)`.
    pub fn rectified(mut self) -> Self {
        self.relu = true;
        self
    }

    pub fn is_rectified(&self) -> bool {
        self.relu
    }

    pub fn random_projection(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config("projection dimensions must be positive".into()));
        }
        let mut rng = RngStream::new(seed, "extractor/projection").rng();
        let scale = 1.0 / (d_out as f64).sqrt();
        let data = (0..d_in * d_out).map(|_| standard_normal(&mut rng) * scale).collect();
        Ok(Self {
            d_in,
            kind: Kind::Projection(Matrix::from_vec(d_out, d_in, data)?),
            relu: false,
        })
    }

    pub fn from_spec(spec: ExtractorSpec, d_in: usize) -> Result<Self> {
        match spec {
            ExtractorSpec::Identity => Ok(Self::identity(d_in)),
            ExtractorSpec::Relu => Ok(Self::identity(d_in).rectified()),
            ExtractorSpec::RandomProjection { d_out, seed, relu } => {
                let e = Self::random_projection(d_in, d_out, seed)?;
                Ok(if relu { e.rectified() } else { e })
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            Kind::Identity => self.d_in,
            Kind::Projection(p) => p.rows(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                got: x.len(),
            });
        }
        let mut z: Vec<f64> = match &self.kind {
            Kind::Identity => x.to_vec(),
            Kind::Projection(p) => p
                .iter_rows()
                .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        };
        if self.relu {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(z)
    }

    pub fn apply_matrix(&self, x: &Matrix) -> Matrix {
        let mut z = self.linear_matrix(x);
        if self.relu {
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        z
    }

    fn linear_matrix(&self, x: &Matrix) -> Matrix {
        match &self.kind {
            Kind::Identity => x.clone(),
            Kind::Projection(p) => {
                let mut out = Matrix::zeros(x.rows(), p.rows());
                for i in 0..x.rows() {
                    let xi = x.row(i);
                    for (o, r) in out.row_mut(i).iter_mut().zip(p.iter_rows()) {
                        *o = r.iter().zip(xi).map(|(a, b)| a * b).sum();
                    }
                }
                out
            }
        }
    }

    /// Pull a gradient w.r.t. the output at input `x` back to the input
    /// (`P^T g`, masked by the active units when rectified).
    pub fn backprop(&self, x: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let masked;
        let grad_out = if self.relu {
            let pre = match &self.kind {
                Kind::Identity => x.to_vec(),
                Kind::Projection(p) => p
                    .iter_rows()
                    .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
                    .collect(),
            };
            masked = pre
                .iter()
                .zip(grad_out)
                .map(|(&u, &g)| if u > 0.0 { g } else { 0.0 })
                .collect::<Vec<f64>>();
            &masked[..]
        } else {
            grad_out
        };
        match &self.kind {
            Kind::Identity => grad_out.to_vec(),
            Kind::Projection(p) => {
                let mut g = vec![0.0; self.d_in];
                for (r, &go) in p.iter_rows().zip(grad_out) {
                    for (gi, a) in g.iter_mut().zip(r) {
                        *gi += a * go;
                    }
                }
                g
            }
        }
    }

    /// Bit-level fingerprint, used to assert the extractor stays frozen.
    pub fn fingerprint(&self) -> u64 {
        let mut h = fnv(self.d_in as u64, 0xcbf2_9ce4_8422_2325);
        h = fnv(u64::from(self.relu), h);
        if let Kind::Projection(p) = &self.kind {
            for v in p.as_slice() {
                h = fnv(v.to_bits(), h);
            }
        }
        h
    }
}

pub(crate) fn fnv(word: u64, mut h: u64) -> u64 {
    for b in word.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
