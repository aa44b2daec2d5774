use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::FeatureDataset;
use super::stream::TaskStream;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numerics::{permutation, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarStrategy {
    Random,
    #[default]
    Herding,
}

/// Fixed-budget exemplar store.
///
/// `entries[c]` holds row indices into the training set of the task that
/// introduced incremental class `c`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryBuffer {
    budget: usize,
    entries: BTreeMap<usize, Vec<usize>>,
}

impl MemoryBuffer {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            entries: BTreeMap::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn entries(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Stored exemplars as a dataset in class order. Empty when nothing is stored.
    pub fn rows(&self, stream: &TaskStream) -> FeatureDataset {
        let mut parts = Vec::new();
        for (&c, idx) in &self.entries {
            let task = &stream.tasks()[stream.task_of_class(c) - 1];
            parts.push(task.train.select(idx));
        }
        let refs: Vec<&FeatureDataset> = parts.iter().collect();
        FeatureDataset::concat(&refs).unwrap_or_else(|_| {
            let any = &stream.tasks()[0].train;
            any.select(&[])
        })
    }

    /// Rebalance after step `t`: every seen class gets `floor(budget / |Q_t|)`
    /// exemplars. Old lists shrink (herding keeps its prefix, random draws a
    /// seeded subsample); classes not yet stored are filled from their rows.
    /// `embed` maps raw rows to the feature space herding operates in.
    pub fn rebalance(
        &self,
        stream: &TaskStream,
        t: usize,
        strategy: ExemplarStrategy,
        embed: &dyn Fn(&Matrix) -> Matrix,
        rng: &RngStream,
    ) -> Result<MemoryBuffer> {
        stream.check_step(t)?;
        let seen = stream.seen_after(t);
        let quota = self.budget / seen;
        let mut entries = BTreeMap::new();
        for c in 0..seen {
            let stream_rng = rng.derive(format_args!("class{c}"));
            let kept = match self.entries.get(&c) {
                Some(old) => shrink(old, quota, strategy, &stream_rng),
                None => {
                    let task = &stream.tasks()[stream.task_of_class(c) - 1];
                    let rows = task.train.indices_by_class()[c].clone();
                    if rows.is_empty() {
                        return Err(Error::EmptyClass(stream.original_class(c)));
                    }
                    let q = quota.min(rows.len());
                    if q == 0 {
                        Vec::new()
                    } else {
                        match strategy {
                            ExemplarStrategy::Herding => {
                                let feats = embed(task.train.features()).select(&rows);
                                herding_select(&feats, q)?.into_iter().map(|i| rows[i]).collect()
                            }
                            ExemplarStrategy::Random => {
                                let perm = permutation(rows.len(), &mut stream_rng.rng());
                                perm[..q].iter().map(|&i| rows[i]).collect()
                            }
                        }
                    }
                }
            };
            if !kept.is_empty() {
                entries.insert(c, kept);
            }
        }
        Ok(MemoryBuffer {
            budget: self.budget,
            entries,
        })
    }
}

fn shrink(old: &[usize], quota: usize, strategy: ExemplarStrategy, rng: &RngStream) -> Vec<usize> {
    if old.len() <= quota {
        return old.to_vec();
    }
    match strategy {
        ExemplarStrategy::Herding => old[..quota].to_vec(),
        ExemplarStrategy::Random => {
            let mut keep: Vec<usize> = permutation(old.len(), &mut rng.derive("shrink").rng())[..quota].to_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| old[i]).collect()
        }
    }
}

/// Greedy herding: at each step add the row that brings the running mean of
/// the selection closest to the class mean. Ties go to the lowest index.
pub fn herding_select(features: &Matrix, q: usize) -> Result<Vec<usize>> {
    let n = features.rows();
    if q == 0 || q > n {
        return Err(Error::InvalidQuota { quota: q, rows: n });
    }
    let mu = features.column_mean();
    let d = features.cols();
    let mut sum = vec![0.0; d];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(q);
    for s in 0..q {
        let denom = (s + 1) as f64;
        let mut best: Option<(usize, f64)> = None;
        for (i, x) in features.iter_rows().enumerate() {
            if taken[i] {
                continue;
            }
            let dist: f64 = (0..d)
                .map(|j| {
                    let diff = mu[j] - (sum[j] + x[j]) / denom;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("q <= n leaves a candidate");
        taken[i] = true;
        for (acc, v) in sum.iter_mut().zip(features.row(i)) {
            *acc += v;
        }
        order.push(i);
    }
    Ok(order)
}
