//! Incremental training of the classifier over a task stream.
//!
//! Three trainers are provided: replay fine-tuning, replay with logit
//! distillation from the previous step's head, and the latter followed by
//! weight alignment of the new-class rows. They stand in for the
//! distillation- and alignment-based CIL families; the extractor stays frozen.

use serde::{Deserialize, Serialize};

use crate::data::{ExemplarStrategy, FeatureDataset, MemoryBuffer, TaskStream};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::loss::{cross_entropy, distillation_kl};
use crate::model::{Extractor, HeadGrad, HeadInit, LinearHead, SgdConfig, SgdState};
use crate::numerics::{permutation, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CilMethod {
    #[default]
    Replay,
    ReplayDistill,
    ReplayDistillWa,
}

impl CilMethod {
    pub fn name(self) -> &'static str {
        match self {
            CilMethod::Replay => "replay",
            CilMethod::ReplayDistill => "replay_distill",
            CilMethod::ReplayDistillWa => "replay_distill_wa",
        }
    }

    fn distills(self) -> bool {
        !matches!(self, CilMethod::Replay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CilConfig {
    pub method: CilMethod,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub distill_temperature: f64,
    pub distill_weight: f64,
    pub optimizer: SgdConfig,
    pub exemplar_strategy: ExemplarStrategy,
    pub head_init: HeadInit,
}

impl Default for CilConfig {
    fn default() -> Self {
        Self {
            method: CilMethod::Replay,
            epochs_per_task: 10,
            batch_size: 128,
            distill_temperature: 2.0,
            distill_weight: 1.0,
            optimizer: SgdConfig::default(),
            exemplar_strategy: ExemplarStrategy::Herding,
            head_init: HeadInit::SeededUniform,
        }
    }
}

impl CilConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task < 1 {
            return Err(Error::Config("cil.epochs_per_task must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("cil.batch_size must be >= 2".into()));
        }
        if !(self.distill_temperature > 0.0) {
            return Err(Error::Config("cil.distill_temperature must be > 0".into()));
        }
        if !(self.distill_weight >= 0.0) {
            return Err(Error::Config("cil.distill_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Frozen extractor followed by the head over the seen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CilModel {
    pub extractor: Extractor,
    pub head: LinearHead,
    pub seen_classes: Vec<usize>,
}

impl CilModel {
    pub fn new(extractor: Extractor) -> Self {
        let dim = extractor.output_dim();
        Self {
            extractor,
            head: LinearHead::zeros(0, dim),
            seen_classes: Vec::new(),
        }
    }

    pub fn embed(&self, x: &Matrix) -> Matrix {
        self.extractor.apply_matrix(x)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.forward(&self.extractor.apply(x)?)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub task: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub train_acc: f64,
}

/// Result of one incremental step.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub model: CilModel,
    pub memory: MemoryBuffer,
    pub log: Vec<TrainLogEntry>,
}

/// Train step `t` on the new task's rows plus the replay memory, then
/// rebalance the memory.
pub fn train_task(
    model: &CilModel,
    stream: &TaskStream,
    t: usize,
    memory: &MemoryBuffer,
    cfg: &CilConfig,
    rng: &RngStream,
) -> Result<TaskOutcome> {
    cfg.validate()?;
    let task = stream.task(t)?;
    if task.train.is_empty() {
        return Err(Error::EmptyTask(t));
    }
    let prior = stream.seen_after(t - 1);
    if model.head.classes() != prior {
        return Err(Error::Config(format!(
            "step {t} expects a head over {prior} classes, got {}",
            model.head.classes()
        )));
    }

    let old_head = model.head.clone();
    let mut head = model
        .head
        .expand(task.classes.len(), cfg.head_init, &rng.derive("init"));

    let replay = memory.rows(stream);
    let data = FeatureDataset::concat(&[&task.train, &replay])?;
    let inputs = model.embed(data.features());
    let labels = data.labels();
    let n = data.len();

    let batch = cfg.batch_size;
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = cfg.epochs_per_task * steps_per_epoch;
    let distill = cfg.method.distills() && prior > 0 && cfg.distill_weight > 0.0;
    let temp = cfg.distill_temperature;

    let mut sgd = SgdState::new(cfg.optimizer, &head);
    let mut log = Vec::with_capacity(cfg.epochs_per_task);
    let mut step = 0;
    for epoch in 0..cfg.epochs_per_task {
        let order = permutation(n, &mut rng.derive(format_args!("epoch{epoch}")).rng());
        let lr_start = crate::model::cosine_lr(cfg.optimizer.lr, step, total_steps);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grad = HeadGrad::zeros_like(&head);
            for &i in chunk {
                let z = inputs.row(i);
                let logits = head.forward_unchecked(z);
                if argmax(&logits) == labels[i] {
                    correct += 1;
                }
                let (l, g) = cross_entropy(&logits, labels[i]);
                loss_sum += l;
                grad.accumulate(z, &g, scale);
                if distill {
                    let old = old_head.forward_unchecked(z);
                    let (ld, gd) = distillation_kl(&logits, &old, temp);
                    loss_sum += cfg.distill_weight * ld;
                    grad.accumulate(z, &gd, cfg.distill_weight * scale);
                }
            }
            sgd.step(&mut head, &grad, step, total_steps)?;
            step += 1;
        }
        log.push(TrainLogEntry {
            task: t,
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            lr: lr_start,
            train_acc: correct as f64 / n as f64,
        });
    }

    if cfg.method == CilMethod::ReplayDistillWa && prior > 0 {
        let old: Vec<usize> = (0..prior).collect();
        let new: Vec<usize> = (prior..head.classes()).collect();
        head.weight_align(&old, &new)?;
    }

    let mut seen_classes = model.seen_classes.clone();
    seen_classes.extend(task.classes.iter().copied());
    let next = CilModel {
        extractor: model.extractor.clone(),
        head,
        seen_classes,
    };
    let embed = |m: &Matrix| next.embed(m);
    let memory = memory.rebalance(stream, t, cfg.exemplar_strategy, &embed, &rng.derive("memory"))?;
    Ok(TaskOutcome {
        model: next,
        memory,
        log,
    })
}

/// Fraction of rows whose argmax logit equals the label.
pub fn evaluate_accuracy(model: &CilModel, test: &FeatureDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let seen = model.head.classes();
    if let Some(&label) = test.labels().iter().find(|&&l| l >= seen) {
        return Err(Error::UnseenLabel { label, seen });
    }
    let z = model.embed(test.features());
    let correct = z
        .iter_rows()
        .zip(test.labels())
        .filter(|(row, &label)| argmax(&model.head.forward_unchecked(row)) == label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_tasks, ClassOrder};
    use crate::numerics::standard_normal;

    /// Gaussian blobs at `±spread` along distinct axes.
    fn blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> FeatureDataset {
        let mut rng = RngStream::new(seed, "blobs").rng();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..classes * per_class {
            let c = i % classes;
            let mut x: Vec<f64> = (0..dim).map(|_| 0.5 * standard_normal(&mut rng)).collect();
            x[c % dim] += if c < dim { spread } else { -spread };
            rows.push(x);
            labels.push(c);
        }
        FeatureDataset::new(Matrix::from_rows(&rows).unwrap(), labels, classes).unwrap()
    }

    fn config(method: CilMethod) -> CilConfig {
        CilConfig {
            method,
            epochs_per_task: 8,
            batch_size: 32,
            ..CilConfig::default()
        }
    }

    fn run(stream: &TaskStream, budget: usize, cfg: &CilConfig, seed: u64) -> Vec<CilModel> {
        let mut model = CilModel::new(Extractor::identity(stream.tasks()[0].train.dim()));
        let mut mem = MemoryBuffer::new(budget);
        let mut out = Vec::new();
        for t in 1..=stream.num_tasks() {
            let o = train_task(&model, stream, t, &mem, cfg, &RngStream::new(seed, "cil").derive(t)).unwrap();
            model = o.model;
            mem = o.memory;
            out.push(model.clone());
        }
        out
    }

    #[test]
    fn separable_single_task_fits() {
        let ds = blobs(2, 100, 4, 4.0, 1);
        let s = split_tasks(&ds, &ds, 2, &ClassOrder::Identity).unwrap();
        let models = run(&s, 0, &config(CilMethod::Replay), 0);
        assert!(evaluate_accuracy(&models[0], &ds).unwrap() >= 0.99);
    }

    #[test]
    fn replay_reduces_forgetting() {
        let train = blobs(4, 100, 4, 3.0, 2);
        let test = blobs(4, 50, 4, 3.0, 3);
        let s = split_tasks(&train, &test, 2, &ClassOrder::Identity).unwrap();
        let task1 = &s.tasks()[0].test;
        let cfg = config(CilMethod::Replay);
        let without = evaluate_accuracy(&run(&s, 0, &cfg, 4)[1], task1).unwrap();
        let with = evaluate_accuracy(&run(&s, 40, &cfg, 4)[1], task1).unwrap();
        assert!(with > without, "replay {with} vs none {without}");
    }

    #[test]
    fn zero_distill_weight_equals_plain_replay() {
        let ds = blobs(6, 30, 6, 3.0, 5);
        let s = split_tasks(&ds, &ds, 2, &ClassOrder::Identity).unwrap();
        let plain = run(&s, 24, &config(CilMethod::Replay), 9);
        let mut cfg = config(CilMethod::ReplayDistill);
        cfg.distill_weight = 0.0;
        let distill = run(&s, 24, &cfg, 9);
        for (a, b) in plain.iter().zip(&distill) {
            assert_eq!(a.head.fingerprint(), b.head.fingerprint());
        }
        // With a positive weight the trajectory does diverge.
        let distill = run(&s, 24, &config(CilMethod::ReplayDistill), 9);
        assert_ne!(plain[2].head.fingerprint(), distill[2].head.fingerprint());
    }

    #[test]
    fn weight_alignment_equalizes_norms() {
        let ds = blobs(4, 40, 4, 3.0, 6);
        let s = split_tasks(&ds, &ds, 2, &ClassOrder::Identity).unwrap();
        let models = run(&s, 8, &config(CilMethod::ReplayDistillWa), 1);
        let head = &models[1].head;
        let norm = |c: usize| head.row(c).iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(((norm(0) + norm(1)) / 2.0 - (norm(2) + norm(3)) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn accuracy_rules() {
        let ds = blobs(2, 4, 2, 5.0, 7);
        let mut model = CilModel::new(Extractor::identity(2));
        model.head = LinearHead::zeros(2, 2);
        // All-zero logits: lowest index wins, so accuracy is the share of label 0.
        let share0 = ds.labels().iter().filter(|&&l| l == 0).count() as f64 / ds.len() as f64;
        assert_eq!(evaluate_accuracy(&model, &ds).unwrap(), share0);

        model.head = LinearHead::zeros(1, 2);
        assert!(matches!(
            evaluate_accuracy(&model, &ds),
            Err(Error::UnseenLabel { label: 1, seen: 1 })
        ));
    }

    #[test]
    fn accuracy_matches_row_oracle() {
        let ds = blobs(5, 20, 3, 1.0, 8);
        let mut model = CilModel::new(Extractor::identity(3));
        model.head = LinearHead::zeros(0, 3).expand(5, HeadInit::SeededUniform, &RngStream::new(3, "r"));
        let mut hits = 0;
        for i in 0..ds.len() {
            let x = ds.row(i);
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..5 {
                let v = model.head.bias()[c] + (0..3).map(|j| model.head.weights()[c * 3 + j] * x[j]).sum::<f64>();
                if v > best.1 {
                    best = (c, v);
                }
            }
            hits += usize::from(best.0 == ds.labels()[i]);
        }
        assert_eq!(evaluate_accuracy(&model, &ds).unwrap(), hits as f64 / ds.len() as f64);
    }

    #[test]
    fn rejects_out_of_order_steps() {
        let ds = blobs(4, 10, 2, 3.0, 9);
        let s = split_tasks(&ds, &ds, 2, &ClassOrder::Identity).unwrap();
        let model = CilModel::new(Extractor::identity(2));
        let r = train_task(
            &model,
            &s,
            2,
            &MemoryBuffer::new(0),
            &config(CilMethod::Replay),
            &RngStream::new(0, "x"),
        );
        assert!(r.is_err());
        let mut bad = config(CilMethod::Replay);
        bad.batch_size = 1;
        assert!(bad.validate().is_err());
    }
}
