//! Post-hoc OOD scorers over a frozen extractor and head.
//!
//! Every scorer returns a value where higher means more in-distribution.
//! Scorers that need statistics of the training data (ReAct, KLM, NNGuide,
//! relation) are fitted on the rows available at the current step and
//! refitted at every step.

use serde::{Deserialize, Serialize};

use crate::cil::argmax;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::loss::{feature_normalize, feature_normalize_backprop};
use crate::model::{Extractor, LinearHead};
use crate::numerics::{logsumexp_unchecked, norm, softmax_unchecked};
use crate::par::{self, Exec};

/// Floor applied to KLM template entries so the KL divergence stays finite.
pub const KLM_FLOOR: f64 = 1e-12;

/// The pipeline a scorer reads: extractor, optional feature normalization
/// (`z / (||z|| tau)`, used by T2FNorm heads) and a linear head.
#[derive(Debug, Clone, Copy)]
pub struct ScoringModel<'a> {
    pub extractor: &'a Extractor,
    pub head: &'a LinearHead,
    pub feature_norm: Option<f64>,
}

impl<'a> ScoringModel<'a> {
    pub fn new(extractor: &'a Extractor, head: &'a LinearHead) -> Self {
        Self {
            extractor,
            head,
            feature_norm: None,
        }
    }

    /// Extractor output (the penultimate activations).
    pub fn activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.extractor.apply(x)
    }

    pub fn head_input(&self, z: &[f64]) -> Vec<f64> {
        match self.feature_norm {
            Some(tau) => feature_normalize(z, tau),
            None => z.to_vec(),
        }
    }

    pub fn logits_from_activations(&self, z: &[f64]) -> Vec<f64> {
        self.head.forward_unchecked(&self.head_input(z))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits_from_activations(&self.activations(x)?))
    }

    /// Gradient of `objective(logits)` w.r.t. the raw input `x`, given the
    /// gradient of the objective w.r.t. the logits at `x`.
    fn input_gradient(&self, x: &[f64], z: &[f64], dlogits: &[f64]) -> Vec<f64> {
        let head = self.head;
        let mut g_in = vec![0.0; head.dim()];
        for (c, &g) in dlogits.iter().enumerate() {
            for (gi, w) in g_in.iter_mut().zip(head.row(c)) {
                *gi += g * w;
            }
        }
        let g_z = match self.feature_norm {
            Some(tau) => feature_normalize_backprop(z, tau, &g_in),
            None => g_in,
        };
        self.extractor.backprop(x, &g_z)
    }
}

fn default_tau() -> f64 {
    1.0
}
fn default_gen_gamma() -> f64 {
    0.1
}
fn default_gen_top() -> usize {
    100
}
fn default_odin_temperature() -> f64 {
    1000.0
}
fn default_odin_epsilon() -> f64 {
    0.0014
}
fn default_react_percentile() -> f64 {
    90.0
}
fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scorer {
    Msp,
    MaxLogit,
    Energy {
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Gen {
        #[serde(default = "default_gen_gamma")]
        gamma: f64,
        #[serde(default = "default_gen_top")]
        top_m: usize,
    },
    Odin {
        #[serde(default = "default_odin_temperature")]
        temperature: f64,
        #[serde(default = "default_odin_epsilon")]
        epsilon: f64,
    },
    React {
        #[serde(default = "default_react_percentile")]
        percentile: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Klm,
    NnGuide {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    RelationSimplified {
        #[serde(default = "default_k")]
        k: usize,
    },
}

impl Scorer {
    pub fn energy() -> Self {
        Scorer::Energy { tau: 1.0 }
    }
    pub fn gen() -> Self {
        Scorer::Gen { gamma: 0.1, top_m: 100 }
    }
    pub fn odin() -> Self {
        Scorer::Odin {
            temperature: 1000.0,
            epsilon: 0.0014,
        }
    }
    pub fn react() -> Self {
        Scorer::React {
            percentile: 90.0,
            tau: 1.0,
        }
    }
    pub fn nnguide() -> Self {
        Scorer::NnGuide { k: 10, tau: 1.0 }
    }
    pub fn relation() -> Self {
        Scorer::RelationSimplified { k: 10 }
    }

    /// All nine scorers with default hyperparameters.
    pub fn roster() -> Vec<Scorer> {
        vec![
            Scorer::Msp,
            Scorer::odin(),
            Scorer::energy(),
            Scorer::MaxLogit,
            Scorer::gen(),
            Scorer::react(),
            Scorer::Klm,
            Scorer::relation(),
            Scorer::nnguide(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Msp => "msp",
            Scorer::MaxLogit => "maxlogit",
            Scorer::Energy { .. } => "energy",
            Scorer::Gen { .. } => "gen",
            Scorer::Odin { .. } => "odin",
            Scorer::React { .. } => "react",
            Scorer::Klm => "klm",
            Scorer::NnGuide { .. } => "nnguide",
            Scorer::RelationSimplified { .. } => "relation_simplified",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Scorer::Energy { tau } => positive("energy.tau", tau),
            Scorer::Gen { gamma, top_m } => {
                positive("gen.gamma", gamma)?;
                if top_m == 0 {
                    return Err(Error::Config("gen.top_m must be >= 1".into()));
                }
                Ok(())
            }
            Scorer::Odin { temperature, epsilon } => {
                positive("odin.temperature", temperature)?;
                if !(epsilon >= 0.0) {
                    return Err(Error::Config("odin.epsilon must be >= 0".into()));
                }
                Ok(())
            }
            Scorer::React { percentile, tau } => {
                positive("react.tau", tau)?;
                if !(0.0..=100.0).contains(&percentile) {
                    return Err(Error::Config("react.percentile must be in [0, 100]".into()));
                }
                Ok(())
            }
            Scorer::NnGuide { k, tau } => {
                positive("nnguide.tau", tau)?;
                if k == 0 {
                    return Err(Error::Config("nnguide.k must be >= 1".into()));
                }
                Ok(())
            }
            Scorer::RelationSimplified { k: 0 } => {
                Err(Error::Config("relation_simplified.k must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Statistics of the in-distribution training rows a scorer needs.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerFit {
    None,
    React {
        threshold: f64,
    },
    Klm {
        /// Mean softmax over rows predicted as each class; `None` if no row was.
        templates: Vec<Option<Vec<f64>>>,
    },
    Bank {
        /// L2-normalized activations, one row per training sample.
        features: Matrix,
        /// Max softmax of each bank row.
        msp: Vec<f64>,
    },
}

/// Linear-interpolated percentile of `values` (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Fit `scorer` on the raw training rows `rows`.
pub fn fit(scorer: &Scorer, model: &ScoringModel<'_>, rows: &Matrix) -> Result<ScorerFit> {
    scorer.validate()?;
    let needs_rows = matches!(
        scorer,
        Scorer::React { .. } | Scorer::Klm | Scorer::NnGuide { .. } | Scorer::RelationSimplified { .. }
    );
    if needs_rows && rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    match *scorer {
        Scorer::React { percentile: p, .. } => {
            if p >= 100.0 {
                return Ok(ScorerFit::React {
                    threshold: f64::INFINITY,
                });
            }
            let z = model.extractor.apply_matrix(rows);
            Ok(ScorerFit::React {
                threshold: percentile(z.as_slice(), p)?,
            })
        }
        Scorer::Klm => {
            let c = model.head.classes();
            let mut sums = vec![vec![0.0; c]; c];
            let mut counts = vec![0usize; c];
            for x in rows.iter_rows() {
                let p = softmax_unchecked(&model.logits(x)?, 1.0);
                let k = argmax(&p);
                counts[k] += 1;
                for (s, v) in sums[k].iter_mut().zip(&p) {
                    *s += v;
                }
            }
            let templates = sums
                .into_iter()
                .zip(counts)
                .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
                .collect();
            Ok(ScorerFit::Klm { templates })
        }
        Scorer::NnGuide { .. } | Scorer::RelationSimplified { .. } => {
            let mut features = Matrix::zeros(0, model.extractor.output_dim());
            let mut msp = Vec::with_capacity(rows.rows());
            for x in rows.iter_rows() {
                let z = model.activations(x)?;
                let logits = model.logits_from_activations(&z);
                msp.push(softmax_unchecked(&logits, 1.0).into_iter().fold(0.0, f64::max));
                let n = norm(&z);
                let unit: Vec<f64> = if n > 0.0 { z.iter().map(|v| v / n).collect() } else { z };
                features.push_row(&unit)?;
            }
            Ok(ScorerFit::Bank { features, msp })
        }
        _ => Ok(ScorerFit::None),
    }
}

fn max_softmax(logits: &[f64], tau: f64) -> f64 {
    softmax_unchecked(logits, tau).into_iter().fold(0.0, f64::max)
}

/// Cosine similarity of `z` to every bank row, `(similarity, index)` sorted
/// by decreasing similarity then increasing index.
fn neighbours(bank: &Matrix, z: &[f64]) -> Vec<(f64, usize)> {
    let n = norm(z);
    let mut sims: Vec<(f64, usize)> = bank
        .iter_rows()
        .enumerate()
        .map(|(i, b)| {
            let s = if n > 0.0 {
                b.iter().zip(z).map(|(a, c)| a * c).sum::<f64>() / n
            } else {
                0.0
            };
            (s, i)
        })
        .collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    sims
}

/// KL(p || template) with the template floored at [`KLM_FLOOR`].
fn kl_floored(p: &[f64], template: &[f64]) -> f64 {
    p.iter()
        .zip(template)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, di)| pi * (pi.ln() - di.max(KLM_FLOOR).ln()))
        .sum()
}

fn fit_mismatch(scorer: &Scorer) -> Error {
    Error::Config(format!("scorer `{}` used with a fit of another kind", scorer.name()))
}

/// Score one raw input row. Higher means more in-distribution.
pub fn score(scorer: &Scorer, fit: &ScorerFit, model: &ScoringModel<'_>, x: &[f64]) -> Result<f64> {
    let z = model.activations(x)?;
    match (*scorer, fit) {
        (Scorer::Msp, _) => Ok(max_softmax(&model.logits_from_activations(&z), 1.0)),
        (Scorer::MaxLogit, _) => Ok(model
            .logits_from_activations(&z)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)),
        (Scorer::Energy { tau }, _) => Ok(logsumexp_unchecked(&model.logits_from_activations(&z), tau)),
        (Scorer::Gen { gamma, top_m }, _) => {
            let mut p = softmax_unchecked(&model.logits_from_activations(&z), 1.0);
            p.sort_by(|a, b| b.total_cmp(a));
            let m = top_m.min(p.len());
            Ok(-p[..m]
                .iter()
                .map(|&q| q.powf(gamma) * (1.0 - q).powf(gamma))
                .sum::<f64>())
        }
        (Scorer::Odin { temperature, epsilon }, _) => {
            let logits = model.logits_from_activations(&z);
            if epsilon == 0.0 {
                return Ok(max_softmax(&logits, temperature));
            }
            let y = argmax(&logits);
            // d/dl log softmax_y(l / T) = (onehot_y - softmax(l / T)) / T
            let p = softmax_unchecked(&logits, temperature);
            let dlogits: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| (f64::from(u8::from(j == y)) - pj) / temperature)
                .collect();
            let g = model.input_gradient(x, &z, &dlogits);
            let perturbed: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + epsilon * sign(*gi)).collect();
            Ok(max_softmax(&model.logits(&perturbed)?, temperature))
        }
        (Scorer::React { tau, .. }, ScorerFit::React { threshold }) => {
            let clipped: Vec<f64> = z.iter().map(|v| v.min(*threshold)).collect();
            Ok(logsumexp_unchecked(&model.logits_from_activations(&clipped), tau))
        }
        (Scorer::Klm, ScorerFit::Klm { templates }) => {
            let p = softmax_unchecked(&model.logits_from_activations(&z), 1.0);
            let best = templates
                .iter()
                .flatten()
                .map(|d| kl_floored(&p, d))
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                Ok(-best)
            } else {
                Err(Error::EmptyInput)
            }
        }
        (Scorer::NnGuide { k, tau }, ScorerFit::Bank { features, .. }) => {
            let energy = logsumexp_unchecked(&model.logits_from_activations(&z), tau);
            let sims = neighbours(features, &z);
            let k = k.min(sims.len());
            let guidance = sims[..k].iter().map(|s| s.0).sum::<f64>() / k as f64;
            Ok(energy * guidance)
        }
        (Scorer::RelationSimplified { k }, ScorerFit::Bank { features, msp }) => {
            let sims = neighbours(features, &z);
            let k = k.min(sims.len());
            Ok(sims[..k].iter().map(|&(s, i)| s.max(0.0) * msp[i]).sum())
        }
        (s, _) => Err(fit_mismatch(&s)),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Score every row of `rows`, in order.
pub fn score_rows(
    scorer: &Scorer,
    fit: &ScorerFit,
    model: &ScoringModel<'_>,
    rows: &Matrix,
    exec: Exec,
) -> Result<Vec<f64>> {
    par::map_range(exec, rows.rows(), |i| score(scorer, fit, model, rows.row(i)))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadInit;
    use crate::numerics::RngStream;
    use rand::Rng;

    fn head_with_logits(logits: &[f64]) -> (Extractor, LinearHead) {
        // Zero weights and the logits as bias: every input yields `logits`.
        let c = logits.len();
        (
            Extractor::identity(2),
            LinearHead::from_parts(c, 2, vec![0.0; 2 * c], logits.to_vec()).unwrap(),
        )
    }

    fn fixed(scorer: Scorer, logits: &[f64]) -> f64 {
        let (e, h) = head_with_logits(logits);
        let m = ScoringModel::new(&e, &h);
        score(&scorer, &ScorerFit::None, &m, &[0.3, 0.4]).unwrap()
    }

    fn random_model(classes: usize, d_in: usize, d_out: usize, seed: u64) -> (Extractor, LinearHead) {
        let e = if d_in == d_out {
            Extractor::identity(d_in)
        } else {
            Extractor::random_projection(d_in, d_out, seed).unwrap()
        };
        let h = LinearHead::zeros(0, d_out).expand(classes, HeadInit::SeededUniform, &RngStream::new(seed, "h"));
        let mut h2 = h.clone();
        for w in h2.weights_mut() {
            *w *= 3.0;
        }
        (e, h2)
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed, "rows").rng();
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn msp_examples() {
        assert_eq!(fixed(Scorer::Msp, &[0.0, 0.0]), 0.5);
        let expected = 1.0 / (1.0 + (-10f64).exp());
        assert!((fixed(Scorer::Msp, &[10.0, 0.0]) - expected).abs() < 1e-15);
        assert!((fixed(Scorer::Msp, &[1.0, 2.0]) - fixed(Scorer::Msp, &[8.0, 9.0])).abs() < 1e-15);
    }

    #[test]
    fn maxlogit_examples() {
        assert_eq!(fixed(Scorer::MaxLogit, &[3.0, -1.0]), 3.0);
        assert_eq!(
            fixed(Scorer::MaxLogit, &[3.5, 0.0]) - fixed(Scorer::MaxLogit, &[3.0, -0.5]),
            0.5
        );
        let mut rng = RngStream::new(1, "ml").rng();
        for _ in 0..50 {
            let l: Vec<f64> = (0..5).map(|_| rng.random_range(-9.0..9.0)).collect();
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(fixed(Scorer::MaxLogit, &l), m);
        }
    }

    #[test]
    fn energy_examples() {
        assert!((fixed(Scorer::energy(), &[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(fixed(Scorer::energy(), &[-4.25]), -4.25);
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((fixed(Scorer::energy(), &[1.0, 2.0, 3.0]) - direct).abs() < 1e-14);
    }

    #[test]
    fn gen_examples() {
        let one_hot = fixed(Scorer::gen(), &[200.0, 0.0, 0.0]);
        assert!(one_hot > -1e-6 && one_hot <= 0.0);
        let uniform = fixed(Scorer::gen(), &[0.0, 0.0]);
        assert!((uniform - (-2.0 * 0.5f64.powf(0.2))).abs() < 1e-14);
        // Sharpening [s, 0, 0] raises the score.
        let sweep: Vec<f64> = (0..20)
            .map(|i| fixed(Scorer::gen(), &[i as f64 * 0.5, 0.0, 0.0]))
            .collect();
        assert!(sweep.windows(2).all(|w| w[1] > w[0]), "{sweep:?}");
    }

    #[test]
    fn odin_degenerate_parameters() {
        let (e, h) = random_model(3, 4, 4, 2);
        let m = ScoringModel::new(&e, &h);
        let x = [0.2, -0.5, 1.0, 0.1];
        let plain = Scorer::Odin {
            temperature: 1.0,
            epsilon: 0.0,
        };
        assert!(
            (score(&plain, &ScorerFit::None, &m, &x).unwrap() - score(&Scorer::Msp, &ScorerFit::None, &m, &x).unwrap())
                .abs()
                < 1e-12
        );
        let tempered = Scorer::Odin {
            temperature: 1000.0,
            epsilon: 0.0,
        };
        let expected = max_softmax(&m.logits(&x).unwrap(), 1000.0);
        assert_eq!(score(&tempered, &ScorerFit::None, &m, &x).unwrap(), expected);
    }

    #[test]
    fn odin_input_gradient_matches_finite_differences() {
        for (seed, norm_tau) in [(3, None), (4, Some(0.1))] {
            let (e, h) = random_model(3, 5, 4, seed);
            let m = ScoringModel {
                extractor: &e,
                head: &h,
                feature_norm: norm_tau,
            };
            let x = [0.4, -1.1, 0.7, 0.2, -0.3];
            let t = 2.0;
            let y = argmax(&m.logits(&x).unwrap());
            let objective = |x: &[f64]| -> f64 {
                let l = m.logits(x).unwrap();
                (softmax_unchecked(&l, t))[y].ln()
            };
            let z = m.activations(&x).unwrap();
            let logits = m.logits_from_activations(&z);
            let p = softmax_unchecked(&logits, t);
            let dl: Vec<f64> = (0..3).map(|j| (f64::from(u8::from(j == y)) - p[j]) / t).collect();
            let analytic = m.input_gradient(&x, &z, &dl);
            for i in 0..5 {
                let h = 1e-6;
                let mut a = x;
                let mut b = x;
                a[i] += h;
                b[i] -= h;
                let numeric = (objective(&a) - objective(&b)) / (2.0 * h);
                let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-6, "coord {i}: {} vs {numeric}", analytic[i]);
            }
        }
    }

    #[test]
    fn odin_perturbation_raises_confidence() {
        let (e, h) = random_model(4, 3, 3, 5);
        let m = ScoringModel::new(&e, &h);
        let x = [0.5, 0.1, -0.4];
        let base = score(
            &Scorer::Odin {
                temperature: 1000.0,
                epsilon: 0.0,
            },
            &ScorerFit::None,
            &m,
            &x,
        )
        .unwrap();
        let pert = score(
            &Scorer::Odin {
                temperature: 1000.0,
                epsilon: 0.05,
            },
            &ScorerFit::None,
            &m,
            &x,
        )
        .unwrap();
        assert!(pert > base);
    }

    #[test]
    fn react_full_percentile_is_energy() {
        let (e, h) = random_model(4, 6, 6, 6);
        let m = ScoringModel::new(&e, &h);
        let train = random_rows(50, 6, 1);
        let test = random_rows(1000, 6, 2);
        let react = Scorer::React {
            percentile: 100.0,
            tau: 1.0,
        };
        let f = fit(&react, &m, &train).unwrap();
        let a = score_rows(&react, &f, &m, &test, Exec::Sequential).unwrap();
        let b = score_rows(&Scorer::energy(), &ScorerFit::None, &m, &test, Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn react_saturation() {
        let (e, h) = random_model(3, 2, 2, 7);
        let m = ScoringModel::new(&e, &h);
        let f = ScorerFit::React { threshold: -5.0 };
        let react = Scorer::react();
        let s1 = score(&react, &f, &m, &[1.0, 2.0]).unwrap();
        let s2 = score(&react, &f, &m, &[7.0, -4.0]).unwrap();
        assert_eq!(s1, s2);
        let expected = logsumexp_unchecked(&h.forward_unchecked(&[-5.0, -5.0]), 1.0);
        assert_eq!(s1, expected);
    }

    #[test]
    fn percentile_matches_sort_oracle() {
        let mut rng = RngStream::new(8, "pct").rng();
        let vals: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // 90th percentile of 1000 values: position 0.9 * 999 = 899.1.
        let oracle = sorted[899] + 0.1 * (sorted[900] - sorted[899]);
        assert!((percentile(&vals, 90.0).unwrap() - oracle).abs() < 1e-15);
        assert_eq!(percentile(&vals, 100.0).unwrap(), sorted[999]);
        assert_eq!(percentile(&vals, 0.0).unwrap(), sorted[0]);
    }

    #[test]
    fn klm_cases() {
        let (e, h) = head_with_logits(&[0.0, 0.0]);
        let m = ScoringModel::new(&e, &h);
        let uniform = ScorerFit::Klm {
            templates: vec![Some(vec![0.5, 0.5]), None],
        };
        // p equals the template: maximal score.
        assert_eq!(score(&Scorer::Klm, &uniform, &m, &[0.0, 0.0]).unwrap(), 0.0);

        let (e, h) = head_with_logits(&[800.0, 0.0]);
        let m = ScoringModel::new(&e, &h);
        let s = score(&Scorer::Klm, &uniform, &m, &[0.0, 0.0]).unwrap();
        assert!((s + 2f64.ln()).abs() < 1e-12);

        // A zero template entry is floored, keeping the score finite.
        let spiky = ScorerFit::Klm {
            templates: vec![Some(vec![0.0, 1.0])],
        };
        let s = score(&Scorer::Klm, &spiky, &m, &[0.0, 0.0]).unwrap();
        assert!(s.is_finite() && s < -20.0);
    }

    #[test]
    fn klm_templates_average_by_prediction() {
        let (e, h) = random_model(3, 2, 2, 9);
        let m = ScoringModel::new(&e, &h);
        let rows = random_rows(40, 2, 3);
        let ScorerFit::Klm { templates } = fit(&Scorer::Klm, &m, &rows).unwrap() else {
            panic!("wrong fit kind");
        };
        for (k, t) in templates.iter().enumerate() {
            let members: Vec<Vec<f64>> = rows
                .iter_rows()
                .map(|x| softmax_unchecked(&m.logits(x).unwrap(), 1.0))
                .filter(|p| argmax(p) == k)
                .collect();
            match t {
                None => assert!(members.is_empty()),
                Some(t) => {
                    for j in 0..3 {
                        let mean = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
                        assert!((t[j] - mean).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn nnguide_cases() {
        let e = Extractor::identity(2);
        let h = LinearHead::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let m = ScoringModel::new(&e, &h);
        let bank = Matrix::from_rows(&[[3.0, 0.0], [2.0, 2.0]]).unwrap();
        let s1 = Scorer::NnGuide { k: 1, tau: 1.0 };
        let f = fit(&s1, &m, &bank).unwrap();
        let x = [3.0, 0.0];
        let energy = logsumexp_unchecked(&[3.0, 0.0], 1.0);
        assert!((score(&s1, &f, &m, &x).unwrap() - energy).abs() < 1e-12);

        let flat = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        let f = fit(&s1, &m, &flat).unwrap();
        assert_eq!(score(&s1, &f, &m, &[0.0, 5.0]).unwrap(), 0.0);
    }

    /// Exhaustive kNN: every bank row's cosine, fully sorted.
    fn knn_oracle(bank: &Matrix, z: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = (0..bank.rows())
            .map(|i| (i, crate::numerics::cosine_sim(bank.row(i), z).unwrap()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn knn_scorers_match_exhaustive_oracle() {
        let (e, h) = random_model(3, 4, 4, 10);
        let m = ScoringModel::new(&e, &h);
        let bank = random_rows(5, 4, 11);
        let queries = random_rows(20, 4, 12);
        let nn = Scorer::NnGuide { k: 3, tau: 1.0 };
        let rel = Scorer::RelationSimplified { k: 5 };
        let f_nn = fit(&nn, &m, &bank).unwrap();
        let f_rel = fit(&rel, &m, &bank).unwrap();
        for x in queries.iter_rows() {
            let energy = logsumexp_unchecked(&m.logits(x).unwrap(), 1.0);
            let top3 = knn_oracle(&bank, x, 3);
            let expected = energy * top3.iter().map(|t| t.1).sum::<f64>() / 3.0;
            assert!((score(&nn, &f_nn, &m, x).unwrap() - expected).abs() < 1e-12);

            let expected: f64 = knn_oracle(&bank, x, 5)
                .iter()
                .map(|&(i, s)| s.max(0.0) * max_softmax(&m.logits(bank.row(i)).unwrap(), 1.0))
                .sum();
            assert!((score(&rel, &f_rel, &m, x).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn relation_cases() {
        let e = Extractor::identity(2);
        // MSP of 0.9 on the bank row [1, 0]: logits [ln 9, 0].
        let h = LinearHead::from_parts(2, 2, vec![9f64.ln(), 0.0, 0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let m = ScoringModel::new(&e, &h);
        let rel = Scorer::RelationSimplified { k: 1 };
        let f = fit(&rel, &m, &Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap();
        assert!((score(&rel, &f, &m, &[1.0, 0.0]).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(score(&rel, &f, &m, &[-1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn scores_are_deterministic_across_exec_modes() {
        let (e, h) = random_model(4, 5, 3, 13);
        let m = ScoringModel::new(&e, &h);
        let train = random_rows(60, 5, 14);
        let test = random_rows(200, 5, 15);
        for s in Scorer::roster() {
            let f = fit(&s, &m, &train).unwrap();
            let a = score_rows(&s, &f, &m, &test, Exec::Sequential).unwrap();
            let b = crate::par::with_threads(4, || score_rows(&s, &f, &m, &test, Exec::Parallel).unwrap());
            assert_eq!(a, b, "{}", s.name());
        }
    }

    #[test]
    fn fit_kind_mismatch_is_an_error() {
        let (e, h) = random_model(2, 2, 2, 16);
        let m = ScoringModel::new(&e, &h);
        assert!(score(&Scorer::Klm, &ScorerFit::None, &m, &[0.0, 1.0]).is_err());
        assert!(score(&Scorer::Msp, &ScorerFit::None, &m, &[0.0]).is_err());
    }

    #[test]
    fn scorer_config_parses_with_defaults() {
        let s: Scorer = serde_json::from_str(r#"{"kind":"odin"}"#).unwrap();
        assert_eq!(s, Scorer::odin());
        let s: Scorer = serde_json::from_str(r#"{"kind":"react","percentile":95}"#).unwrap();
        assert_eq!(
            s,
            Scorer::React {
                percentile: 95.0,
                tau: 1.0
            }
        );
        assert!(serde_json::from_str::<Scorer>(r#"{"kind":"mahalanobis"}"#).is_err());
    }
}
