//! OOD detection and CIL metrics.
//!
//! Scores follow the crate-wide orientation: higher means more
//! in-distribution. AUROC and FPR are computed from integer pair and
//! threshold counts so they are exactly reproducible.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredSplit {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoredSplit {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Self {
        Self { id_scores, ood_scores }
    }

    fn validate(&self) -> Result<()> {
        if self.id_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(Error::EmptyInput);
        }
        let all = self.id_scores.iter().chain(&self.ood_scores);
        match all.enumerate().find(|(_, v)| !v.is_finite()) {
            Some((i, _)) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// `(score, is_ood)` sorted ascending by score, ID before OOD on ties.
fn ranked(s: &ScoredSplit) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&x| (x, false))
        .chain(s.ood_scores.iter().map(|&x| (x, true)))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// `P(id > ood) + 0.5 * P(id = ood)` over all ID/OOD pairs.
pub fn auroc(s: &ScoredSplit) -> Result<f64> {
    s.validate()?;
    let v = ranked(s);
    // 2 * (#id > ood) + (#id == ood), accumulated per tie group.
    let (mut twice_wins, mut ood_below) = (0u128, 0u128);
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        let (mut ids, mut oods) = (0u128, 0u128);
        while j < v.len() && v[j].0.total_cmp(&v[i].0) == Ordering::Equal {
            if v[j].1 {
                oods += 1;
            } else {
                ids += 1;
            }
            j += 1;
        }
        twice_wins += 2 * ids * ood_below + ids * oods;
        ood_below += oods;
        i = j;
    }
    let pairs = 2 * s.id_scores.len() as u128 * s.ood_scores.len() as u128;
    Ok(twice_wins as f64 / pairs as f64)
}

/// FPR on OOD at the largest threshold that keeps at least 95% of ID rows.
pub fn fpr_at_tpr95(s: &ScoredSplit) -> Result<f64> {
    s.validate()?;
    let n = s.id_scores.len();
    let mut id = s.id_scores.clone();
    id.sort_by(|a, b| b.total_cmp(a));
    let needed = (95 * n).div_ceil(100);
    let threshold = id[needed - 1];
    let fp = s.ood_scores.iter().filter(|&&x| x >= threshold).count();
    Ok(fp as f64 / s.ood_scores.len() as f64)
}

/// Average precision with OOD as the positive class, ranking by ascending
/// ID-score. Ties place ID rows first (pessimistic).
pub fn average_precision(s: &ScoredSplit) -> Result<f64> {
    s.validate()?;
    let (mut tp, mut sum) = (0usize, 0.0);
    for (k, &(_, is_ood)) in ranked(s).iter().enumerate() {
        if is_ood {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / s.ood_scores.len() as f64)
}

pub fn average_over_steps(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: f64,
    pub fpr95: f64,
    pub ap: f64,
}

pub fn evaluate(s: &ScoredSplit) -> Result<OodMetrics> {
    Ok(OodMetrics {
        auroc: auroc(s)?,
        fpr95: fpr_at_tpr95(s)?,
        ap: average_precision(s)?,
    })
}
