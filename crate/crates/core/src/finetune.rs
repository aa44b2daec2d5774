//! Extra-head fine-tuning on top of a frozen CIL model.
//!
//! At every step an extra classifier `f_t` is trained on the frozen
//! features. Classification accuracy keeps coming from the CIL head; only
//! OOD scores are read from `f_t`. Methods: plain cross-entropy, LogitNorm,
//! T2FNorm and BER (energy regularization with mixup pseudo-OOD rows and
//! old/new mixes).

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cil::CilModel;
use crate::data::{MemoryBuffer, TaskStream};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::loss::{cross_entropy, energy_grad, feature_normalize, logitnorm_cross_entropy};
use crate::model::{HeadGrad, HeadInit, LinearHead, SgdConfig, SgdState};
use crate::numerics::{logsumexp_unchecked, permutation, sample_beta, RngStream};
use crate::posthoc::{Scorer, ScoringModel};

/// Redraws allowed for a pseudo-OOD pair whose sources share a label.
pub const MAX_PAIR_REDRAWS: usize = 16;

/// `E(x) = -tau * logsumexp(logits / tau)`.
pub fn energy(logits: &[f64], tau: f64) -> Result<f64> {
    Ok(-crate::numerics::logsumexp(logits, tau)?)
}

/// Which side of each margin the squared hinges penalize.
///
/// `Literal`: ID rows pay `max(0, p_in - E)^2`, pseudo-OOD rows
/// `max(0, E - p_out)^2`, old/new mixes `max(0, E - p_in)^2`.
///
/// `EnergyPaper`: ID rows and old/new mixes are pushed below the lower
/// margin, `max(0, E - lo)^2`, and pseudo-OOD rows above the upper one,
/// `max(0, hi - E)^2`, with `lo = min(p_in, p_out)` and `hi = max(p_in, p_out)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeOrientation {
    #[default]
    Literal,
    EnergyPaper,
}

/// Where BER forms its mixes. `Input` mixes raw rows and passes the mix
/// through the frozen extractor, as image-space mixup would. `Feature` mixes
/// the extracted head inputs directly. The two agree for a linear extractor
/// without feature normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixSpace {
    #[default]
    Input,
    Feature,
}

/// A squared hinge `max(0, sign * (E - margin))^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hinge {
    sign: f64,
    margin: f64,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    1.0
}
fn default_p_in() -> f64 {
    -5.0
}
fn default_p_out() -> f64 {
    -27.0
}
fn default_lambda() -> f64 {
    0.002
}
fn default_beta() -> (f64, f64) {
    (1.0, 1.0)
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_p_in")]
    pub p_in: f64,
    #[serde(default = "default_p_out")]
    pub p_out: f64,
    #[serde(default = "default_lambda")]
    pub lambda_old: f64,
    #[serde(default = "default_beta")]
    pub beta_params: (f64, f64),
    #[serde(default)]
    pub hinge_orientation: HingeOrientation,
    /// Energy regularization on new-task rows and pseudo-OOD mixes.
    #[serde(default = "default_true")]
    pub nter: bool,
    /// Energy regularization on old/new mixes.
    #[serde(default = "default_true")]
    pub oter: bool,
    #[serde(default)]
    pub mix_space: MixSpace,
}

impl Default for BerConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            tau: default_tau(),
            p_in: default_p_in(),
            p_out: default_p_out(),
            lambda_old: default_lambda(),
            beta_params: default_beta(),
            hinge_orientation: HingeOrientation::default(),
            nter: true,
            oter: true,
            mix_space: MixSpace::default(),
        }
    }
}

impl BerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("ber.alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("ber.tau must be positive, got {}", self.tau));
        }
        if !(self.p_out < self.p_in) || !self.p_in.is_finite() || !self.p_out.is_finite() {
            return bad(format!(
                "ber margins need p_out < p_in, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_old) {
            return bad(format!("ber.lambda_old must be in [0, 1], got {}", self.lambda_old));
        }
        let (a, b) = self.beta_params;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return bad(format!("ber.beta_params must be positive, got ({a}, {b})"));
        }
        Ok(())
    }

    fn hinges(&self) -> (Hinge, Hinge, Hinge) {
        match self.hinge_orientation {
            HingeOrientation::Literal => (
                Hinge {
                    sign: -1.0,
                    margin: self.p_in,
                },
                Hinge {
                    sign: 1.0,
                    margin: self.p_out,
                },
                Hinge {
                    sign: 1.0,
                    margin: self.p_in,
                },
            ),
            HingeOrientation::EnergyPaper => {
                let lo = self.p_in.min(self.p_out);
                let hi = self.p_in.max(self.p_out);
                (
                    Hinge { sign: 1.0, margin: lo },
                    Hinge { sign: -1.0, margin: hi },
                    Hinge { sign: 1.0, margin: lo },
                )
            }
        }
    }
}

fn default_logitnorm_tau() -> f64 {
    0.04
}
fn default_t2f_tau() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FinetuneMethod {
    Plain,
    #[serde(rename = "logitnorm")]
    LogitNorm {
        #[serde(default = "default_logitnorm_tau")]
        tau: f64,
    },
    #[serde(rename = "t2fnorm")]
    T2FNorm {
        #[serde(default = "default_t2f_tau")]
        tau: f64,
    },
    Ber(BerConfig),
}

impl FinetuneMethod {
    pub fn logitnorm() -> Self {
        FinetuneMethod::LogitNorm { tau: 0.04 }
    }

    pub fn t2fnorm() -> Self {
        FinetuneMethod::T2FNorm { tau: 0.1 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FinetuneMethod::Plain => "plain",
            FinetuneMethod::LogitNorm { .. } => "logitnorm",
            FinetuneMethod::T2FNorm { .. } => "t2fnorm",
            FinetuneMethod::Ber(_) => "ber",
        }
    }

    /// Scorer applied to the fine-tuned head when none is configured.
    pub fn default_scorer(&self) -> Scorer {
        match self {
            FinetuneMethod::LogitNorm { .. } => Scorer::Msp,
            _ => Scorer::energy(),
        }
    }

    fn feature_norm(&self) -> Option<f64> {
        match *self {
            FinetuneMethod::T2FNorm { tau } => Some(tau),
            _ => None,
        }
    }
}

/// Starting point of the extra head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadStart {
    /// A copy of the CIL head at this step.
    #[default]
    Copy,
    /// Seeded uniform initialization.
    Fresh,
}

fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    128
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub method: FinetuneMethod,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: SgdConfig,
    #[serde(default)]
    pub init: HeadStart,
    /// Scorer read from the fine-tuned head; defaults per method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<Scorer>,
}

impl FinetuneConfig {
    pub fn new(method: FinetuneMethod) -> Self {
        Self {
            method,
            epochs: default_epochs(),
            batch_size: default_batch(),
            optimizer: SgdConfig::default(),
            init: HeadStart::Copy,
            scorer: None,
        }
    }

    pub fn scorer(&self) -> Scorer {
        self.scorer.unwrap_or_else(|| self.method.default_scorer())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("finetune.epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("finetune.batch_size must be >= 2".into()));
        }
        self.scorer().validate()?;
        match self.method {
            FinetuneMethod::LogitNorm { tau } | FinetuneMethod::T2FNorm { tau } if !(tau > 0.0) => Err(Error::Config(
                format!("finetune temperature must be positive, got {tau}"),
            )),
            FinetuneMethod::Ber(b) => b.validate(),
            _ => Ok(()),
        }
    }
}

/// Mixup pseudo-OOD rows built from pairs with different labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOodBatch {
    pub rows: Matrix,
    pub pairs: Vec<(usize, usize)>,
    pub betas: Vec<f64>,
    /// Set when the input held a single label, so no pair could be formed.
    pub single_label: bool,
}

/// Rows `lambda * x + (1 - lambda) * m` with their `(x, m)` sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedOldBatch {
    pub rows: Matrix,
    pub labels: Vec<usize>,
    pub sources: Vec<(usize, usize)>,
}

/// `beta * a + (1 - beta) * b`.
pub fn mix(a: &[f64], b: &[f64], beta: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| beta * x + (1.0 - beta) * y).collect()
}

/// Pair every row with another of a different label and mix the pair with
/// a fresh `Beta(a, b)` weight. Partners come from a seeded permutation;
/// same-label partners are redrawn up to [`MAX_PAIR_REDRAWS`] times and the
/// row is dropped if they all collide.
pub fn synth_pseudo_ood<R: Rng + ?Sized>(
    rows: &Matrix,
    labels: &[usize],
    beta_params: (f64, f64),
    rng: &mut R,
) -> Result<PseudoOodBatch> {
    if rows.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.rows(),
            got: labels.len(),
        });
    }
    let mut out = PseudoOodBatch {
        rows: Matrix::zeros(0, rows.cols()),
        pairs: Vec::new(),
        betas: Vec::new(),
        single_label: false,
    };
    if labels.iter().all(|&l| l == labels.first().copied().unwrap_or(0)) {
        out.single_label = true;
        return Ok(out);
    }
    let n = labels.len();
    let partners = permutation(n, rng);
    for (i, &first) in partners.iter().enumerate() {
        let mut j = first;
        let mut redraws = 0;
        while labels[j] == labels[i] && redraws < MAX_PAIR_REDRAWS {
            j = rng.random_range(0..n);
            redraws += 1;
        }
        if labels[j] == labels[i] {
            continue;
        }
        let beta = sample_beta(beta_params.0, beta_params.1, rng)?;
        out.rows.push_row(&mix(rows.row(i), rows.row(j), beta))?;
        out.pairs.push((i, j));
        out.betas.push(beta);
    }
    Ok(out)
}

/// Mix new-task rows into memory rows. Both sides are walked in a seeded
/// order; the shorter one cycles. Each mix keeps the memory row's label.
pub fn synth_old_mix<R: Rng + ?Sized>(
    new_rows: &Matrix,
    mem_rows: &Matrix,
    mem_labels: &[usize],
    lambda: f64,
    rng: &mut R,
) -> Result<MixedOldBatch> {
    if new_rows.is_empty() || mem_rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    if new_rows.cols() != mem_rows.cols() {
        return Err(Error::DimensionMismatch {
            expected: new_rows.cols(),
            got: mem_rows.cols(),
        });
    }
    let (nx, nm) = (new_rows.rows(), mem_rows.rows());
    let order_x = permutation(nx, rng);
    let order_m = permutation(nm, rng);
    let mut out = MixedOldBatch {
        rows: Matrix::zeros(0, new_rows.cols()),
        labels: Vec::with_capacity(nx.max(nm)),
        sources: Vec::with_capacity(nx.max(nm)),
    };
    for k in 0..nx.max(nm) {
        let (i, j) = (order_x[k % nx], order_m[k % nm]);
        out.rows.push_row(&mix(new_rows.row(i), mem_rows.row(j), lambda))?;
        out.labels.push(mem_labels[j]);
        out.sources.push((i, j));
    }
    Ok(out)
}

/// Mean squared energy hinge over `rows`, with its head gradient.
fn hinge_term(head: &LinearHead, rows: &Matrix, tau: f64, h: Hinge) -> (f64, HeadGrad) {
    let mut grad = HeadGrad::zeros_like(head);
    if rows.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / rows.rows() as f64;
    let mut loss = 0.0;
    for x in rows.iter_rows() {
        let logits = head.forward_unchecked(x);
        let e = -logsumexp_unchecked(&logits, tau);
        let gap = h.sign * (e - h.margin);
        if gap <= 0.0 {
            continue;
        }
        loss += gap * gap;
        let de = 2.0 * gap * h.sign;
        let dl: Vec<f64> = energy_grad(&logits, tau).into_iter().map(|g| g * de).collect();
        grad.accumulate(x, &dl, scale);
    }
    (loss * scale, grad)
}

/// Energy loss on new-task rows and pseudo-OOD rows. An empty pseudo batch
/// contributes zero.
pub fn nter_loss(head: &LinearHead, id_rows: &Matrix, pseudo: &Matrix, cfg: &BerConfig) -> (f64, HeadGrad) {
    let (h_id, h_pseudo, _) = cfg.hinges();
    let (l1, mut g) = hinge_term(head, id_rows, cfg.tau, h_id);
    let (l2, g2) = hinge_term(head, pseudo, cfg.tau, h_pseudo);
    g.add_scaled(&g2, 1.0);
    (l1 + l2, g)
}

/// Energy loss on old/new mixes.
pub fn oter_loss(head: &LinearHead, mixed: &Matrix, cfg: &BerConfig) -> (f64, HeadGrad) {
    let (_, _, h_old) = cfg.hinges();
    hinge_term(head, mixed, cfg.tau, h_old)
}

/// Cross-entropy flavour used by a fine-tuning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CeKind {
    Plain,
    LogitNorm(f64),
}

/// Mean cross-entropy over `rows` with its head gradient.
pub fn ce_loss(head: &LinearHead, rows: &Matrix, labels: &[usize], kind: CeKind) -> (f64, HeadGrad) {
    let mut grad = HeadGrad::zeros_like(head);
    if rows.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / rows.rows() as f64;
    let mut loss = 0.0;
    for (x, &y) in rows.iter_rows().zip(labels) {
        let logits = head.forward_unchecked(x);
        let (l, g) = match kind {
            CeKind::Plain => cross_entropy(&logits, y),
            CeKind::LogitNorm(tau) => logitnorm_cross_entropy(&logits, y, tau),
        };
        loss += l;
        grad.accumulate(x, &g, scale);
    }
    (loss * scale, grad)
}

/// Inputs of one BER iteration, all in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct BerBatch {
    pub ce_rows: Matrix,
    pub ce_labels: Vec<usize>,
    pub id_rows: Matrix,
    pub pseudo: Matrix,
    pub mixed: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BerLoss {
    pub total: f64,
    pub ce: f64,
    pub l_n: f64,
    pub l_o: f64,
}

/// `CE + alpha * (L_n + L_o)`; disabled terms count as zero.
pub fn ber_total_loss(head: &LinearHead, batch: &BerBatch, cfg: &BerConfig) -> (BerLoss, HeadGrad) {
    let (ce, mut grad) = ce_loss(head, &batch.ce_rows, &batch.ce_labels, CeKind::Plain);
    let mut out = BerLoss {
        ce,
        ..BerLoss::default()
    };
    if cfg.nter {
        let (l, g) = nter_loss(head, &batch.id_rows, &batch.pseudo, cfg);
        out.l_n = l;
        grad.add_scaled(&g, cfg.alpha);
    }
    if cfg.oter {
        let (l, g) = oter_loss(head, &batch.mixed, cfg);
        out.l_o = l;
        grad.add_scaled(&g, cfg.alpha);
    }
    out.total = ce + cfg.alpha * (out.l_n + out.l_o);
    (out, grad)
}

/// Per-epoch means of the loss components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLogEntry {
    pub task: usize,
    pub epoch: usize,
    pub ce: f64,
    pub l_n: f64,
    pub l_o: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetunedHead {
    pub method: FinetuneMethod,
    pub head: LinearHead,
    pub feature_norm: Option<f64>,
    pub log: Vec<FinetuneLogEntry>,
    pub warnings: Vec<String>,
}

impl FinetunedHead {
    pub fn scoring_model<'a>(&'a self, model: &'a CilModel) -> ScoringModel<'a> {
        ScoringModel {
            extractor: &model.extractor,
            head: &self.head,
            feature_norm: self.feature_norm,
        }
    }
}

fn head_inputs(z: Matrix, norm: Option<f64>) -> Matrix {
    match norm {
        None => z,
        Some(tau) => {
            let mut z = z;
            for i in 0..z.rows() {
                let row = feature_normalize(z.row(i), tau);
                z.row_mut(i).copy_from_slice(&row);
            }
            z
        }
    }
}

/// Train the extra head `f_t` for step `t` on the new task plus the replay
/// memory available when the step started. The CIL model is only read.
pub fn finetune(
    model: &CilModel,
    stream: &TaskStream,
    t: usize,
    memory: &MemoryBuffer,
    cfg: &FinetuneConfig,
    rng: &RngStream,
) -> Result<FinetunedHead> {
    cfg.validate()?;
    let task = stream.task(t)?;
    if task.train.is_empty() {
        return Err(Error::EmptyTask(t));
    }
    let seen = stream.seen_after(t);
    if model.head.classes() != seen {
        return Err(Error::Config(format!(
            "fine-tuning step {t} expects a CIL head over {seen} classes, got {}",
            model.head.classes()
        )));
    }
    let frozen = (model.head.fingerprint(), model.extractor.fingerprint());

    let norm = cfg.method.feature_norm();
    let new_x = head_inputs(model.embed(task.train.features()), norm);
    let new_y = task.train.labels();
    let replay = memory.rows(stream);
    let mem_x = head_inputs(model.embed(replay.features()), norm);
    // Rows the mixes are drawn from, and the map applied after mixing.
    let input_mix = matches!(cfg.method, FinetuneMethod::Ber(b) if b.mix_space == MixSpace::Input);
    let (new_src, mem_src) = if input_mix {
        (task.train.features().clone(), replay.features().clone())
    } else {
        (new_x.clone(), mem_x.clone())
    };
    let lift = |m: Matrix| {
        if input_mix {
            head_inputs(model.embed(&m), norm)
        } else {
            m
        }
    };
    let mem_y = replay.labels();

    let mut head = match cfg.init {
        HeadStart::Copy => model.head.clone(),
        HeadStart::Fresh => {
            LinearHead::zeros(0, model.head.dim()).expand(seen, HeadInit::SeededUniform, &rng.derive("init"))
        }
    };

    let mut warnings = Vec::new();
    if let FinetuneMethod::Ber(b) = cfg.method {
        if b.oter && mem_x.is_empty() {
            let msg = format!("step {t}: replay memory is empty, old/new energy term is zero");
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    let n = new_x.rows();
    let batch = cfg.batch_size;
    let iters = n.div_ceil(batch);
    let total_steps = cfg.epochs * iters;
    let mut sgd = SgdState::new(cfg.optimizer, &head);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut single_label_seen = false;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let erng = rng.derive(format_args!("epoch{epoch}"));
        let mut r = erng.rng();
        let order = permutation(n, &mut r);
        let mem_order = permutation(mem_x.rows(), &mut r);
        let lr = crate::model::cosine_lr(cfg.optimizer.lr, step, total_steps);
        let mut sums = BerLoss::default();
        for (it, chunk) in order.chunks(batch).enumerate() {
            let mem_idx: Vec<usize> = if mem_order.is_empty() {
                Vec::new()
            } else {
                (0..chunk.len().min(mem_order.len()))
                    .map(|k| mem_order[(it * batch + k) % mem_order.len()])
                    .collect()
            };
            let bx = new_x.select(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| new_y[i]).collect();
            let mx = mem_x.select(&mem_idx);
            let my: Vec<usize> = mem_idx.iter().map(|&i| mem_y[i]).collect();

            let (loss, grad) = match cfg.method {
                FinetuneMethod::Ber(bcfg) => {
                    let half = chunk.len().div_ceil(2);
                    let id_half = new_x.select(&chunk[..half]);
                    let ood_half = new_src.select(&chunk[half..]);
                    let ood_labels: Vec<usize> = chunk[half..].iter().map(|&i| new_y[i]).collect();
                    let pseudo = synth_pseudo_ood(&ood_half, &ood_labels, bcfg.beta_params, &mut r)?;
                    single_label_seen |= pseudo.single_label && !ood_half.is_empty();
                    let pseudo_rows = lift(pseudo.rows);
                    let mixed = if mx.is_empty() {
                        Matrix::zeros(0, bx.cols())
                    } else {
                        let (a, m) = (new_src.select(chunk), mem_src.select(&mem_idx));
                        lift(synth_old_mix(&a, &m, &my, bcfg.lambda_old, &mut r)?.rows)
                    };
                    let ce_rows = Matrix::vstack(&[&id_half, &mx])?;
                    let mut ce_labels: Vec<usize> = by[..half].to_vec();
                    ce_labels.extend(&my);
                    let b = BerBatch {
                        ce_rows,
                        ce_labels,
                        id_rows: id_half,
                        pseudo: pseudo_rows,
                        mixed,
                    };
                    ber_total_loss(&head, &b, &bcfg)
                }
                method => {
                    let kind = match method {
                        FinetuneMethod::LogitNorm { tau } => CeKind::LogitNorm(tau),
                        _ => CeKind::Plain,
                    };
                    let rows = Matrix::vstack(&[&bx, &mx])?;
                    let mut labels = by;
                    labels.extend(&my);
                    let (ce, g) = ce_loss(&head, &rows, &labels, kind);
                    (
                        BerLoss {
                            total: ce,
                            ce,
                            ..BerLoss::default()
                        },
                        g,
                    )
                }
            };
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(step));
            }
            sums.ce += loss.ce;
            sums.l_n += loss.l_n;
            sums.l_o += loss.l_o;
            sgd.step(&mut head, &grad, step, total_steps)?;
            step += 1;
        }
        log.push(FinetuneLogEntry {
            task: t,
            epoch: epoch + 1,
            ce: sums.ce / iters as f64,
            l_n: sums.l_n / iters as f64,
            l_o: sums.l_o / iters as f64,
            lr,
        });
    }
    if single_label_seen {
        let msg = format!("step {t}: some batch halves held one label, no pseudo-OOD rows formed");
        warn!("{msg}");
        warnings.push(msg);
    }

    if (model.head.fingerprint(), model.extractor.fingerprint()) != frozen {
        return Err(Error::Config("frozen CIL model changed during fine-tuning".into()));
    }
    Ok(FinetunedHead {
        method: cfg.method,
        head,
        feature_norm: norm,
        log,
        warnings,
    })
}
