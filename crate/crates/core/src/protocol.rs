//! End-to-end benchmark driver.
//!
//! For each seed the CIL model is trained step by step. After every step the
//! configured OOD method is attached: a post-hoc scorer reads the CIL head
//! directly, a fine-tuning method trains an extra head first and scores
//! through it. Accuracy is always measured on the CIL head.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::cil::{evaluate_accuracy, train_task, CilConfig, CilModel, TrainLogEntry};
use crate::data::{
    ood_subset, split_tasks, BenchmarkData, ClassOrder, FeatureDataset, MemoryBuffer, OodSuite, OodTag, SuiteManifest,
    TaskStream,
};
use crate::error::{Error, ErrorKind, Result};
use crate::finetune::{finetune, FinetuneConfig, FinetunedHead};
use crate::metrics::{self, ScoredSplit};
use crate::model::{Extractor, ExtractorSpec};
use crate::numerics::RngStream;
use crate::par::{self, Exec};
use crate::posthoc::{self, Scorer, ScoringModel};
use crate::synthgen::{self, SynthSpec};

/// Where the ID/OOD data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A suite manifest on disk.
    Manifest(PathBuf),
    /// Generated in memory. With `reseed`, every run seed regenerates the
    /// data with that seed instead of `spec.seed`.
    Synthetic {
        #[serde(default)]
        spec: SynthSpec,
        #[serde(default)]
        reseed: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedOrder {
    Identity,
    /// A fresh shuffle for every run seed.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassOrderSpec {
    Named(NamedOrder),
    Given(Vec<usize>),
}

impl Default for ClassOrderSpec {
    fn default() -> Self {
        ClassOrderSpec::Named(NamedOrder::Identity)
    }
}

/// The OOD method attached to every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OodMethod {
    Posthoc(Scorer),
    Finetune(FinetuneConfig),
}

impl OodMethod {
    pub fn finetune(config: FinetuneConfig) -> Self {
        OodMethod::Finetune(config)
    }

    pub fn name(&self) -> &'static str {
        match self {
            OodMethod::Posthoc(s) => s.name(),
            OodMethod::Finetune(config) => config.method.name(),
        }
    }

    pub fn scorer(&self) -> Scorer {
        match *self {
            OodMethod::Posthoc(s) => s,
            OodMethod::Finetune(config) => config.scorer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scorer().validate()?;
        if let OodMethod::Finetune(config) = self {
            config.validate()?;
        }
        Ok(())
    }
}

fn default_budget() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub step_size: usize,
    #[serde(default)]
    pub class_order: ClassOrderSpec,
    #[serde(default = "default_budget")]
    pub memory_budget: usize,
    #[serde(default)]
    pub extractor: ExtractorSpec,
    #[serde(default)]
    pub cil: CilConfig,
    pub ood: OodMethod,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` lets the pool decide. Never changes results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Parse a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Manifest(p) = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.step_size < 2 {
            return Err(Error::Config(format!("step_size must be >= 2, got {}", self.step_size)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if let DataSource::Synthetic { spec, .. } = &self.data {
            spec.validate()?;
        }
        self.cil.validate()?;
        self.ood.validate()
    }

    fn exec(&self) -> Exec {
        self.threads.map_or(Exec::Parallel, Exec::for_threads)
    }
}

/// Load (or generate) the data a config points at. `seed` matters only for
/// reseeded synthetic data.
pub fn load_data(cfg: &RunConfig, seed: u64) -> Result<BenchmarkData> {
    match &cfg.data {
        DataSource::Manifest(path) => {
            let manifest = SuiteManifest::read(path)?;
            manifest.load(path.parent().unwrap_or(Path::new("")))
        }
        DataSource::Synthetic { spec, reseed } => {
            let spec = if *reseed {
                SynthSpec { seed, ..spec.clone() }
            } else {
                spec.clone()
            };
            let g = synthgen::generate(&spec)?;
            Ok(BenchmarkData {
                train: g.train,
                test: g.test,
                ood: g.ood,
            })
        }
    }
}

/// Task stream and extractor for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub stream: TaskStream,
    pub ood: OodSuite,
    pub extractor: Extractor,
    root: RngStream,
}

impl Prepared {
    pub fn rng(&self) -> &RngStream {
        &self.root
    }
}

pub fn prepare(cfg: &RunConfig, data: &BenchmarkData, seed: u64) -> Result<Prepared> {
    let root = RngStream::new(seed, "run");
    let order = match &cfg.class_order {
        ClassOrderSpec::Named(NamedOrder::Identity) => ClassOrder::Identity,
        ClassOrderSpec::Named(NamedOrder::Shuffled) => ClassOrder::Shuffled(root.derive("order")),
        ClassOrderSpec::Given(v) => ClassOrder::Given(v.clone()),
    };
    let stream = split_tasks(&data.train, &data.test, cfg.step_size, &order)?;
    let extractor = Extractor::from_spec(cfg.extractor, data.train.dim())?;
    Ok(Prepared {
        stream,
        ood: data.ood.clone(),
        extractor,
        root,
    })
}

/// The CIL model after step `t` and the memory it was trained with.
#[derive(Debug, Clone)]
pub struct StepState {
    pub step: usize,
    pub model: CilModel,
    /// Replay memory available during step `t` (exemplars of older tasks).
    pub memory_before: MemoryBuffer,
    pub memory_after: MemoryBuffer,
    pub log: Vec<TrainLogEntry>,
}

/// Train every incremental step. The trajectory depends only on the config,
/// the data and the seed, never on the OOD method.
pub fn cil_trajectory(prep: &Prepared, cfg: &RunConfig) -> Result<Vec<StepState>> {
    let mut model = CilModel::new(prep.extractor.clone());
    let mut memory = MemoryBuffer::new(cfg.memory_budget);
    let mut out = Vec::with_capacity(prep.stream.num_tasks());
    for t in 1..=prep.stream.num_tasks() {
        let outcome = train_task(
            &model,
            &prep.stream,
            t,
            &memory,
            &cfg.cil,
            &prep.root.derive("cil").derive(t),
        )?;
        info!(
            "seed {} step {t}: trained on {} classes",
            prep.root.seed(),
            outcome.model.head.classes()
        );
        out.push(StepState {
            step: t,
            model: outcome.model.clone(),
            memory_before: memory,
            memory_after: outcome.memory.clone(),
            log: outcome.log,
        });
        model = outcome.model;
        memory = outcome.memory;
    }
    Ok(out)
}

/// Training rows visible at step `t`: the new task plus the replay memory.
pub fn train_plus(prep: &Prepared, state: &StepState) -> Result<FeatureDataset> {
    let task = prep.stream.task(state.step)?;
    let replay = state.memory_before.rows(&prep.stream);
    FeatureDataset::concat(&[&task.train, &replay])
}

/// Scores of one step: ID test union and each OOD subset, in suite order.
#[derive(Debug, Clone)]
pub struct StepScores {
    pub step: usize,
    pub accuracy: f64,
    pub id: Vec<f64>,
    pub ood: Vec<(String, OodTag, Vec<f64>)>,
    pub finetuned: Option<FinetunedHead>,
}

/// Attach `method` to the model of one step and score ID and OOD rows.
pub fn score_step(prep: &Prepared, state: &StepState, method: &OodMethod, exec: Exec) -> Result<StepScores> {
    let t = state.step;
    let total = prep.stream.num_tasks();
    let id_test = prep.stream.test_union(t)?;
    let accuracy = evaluate_accuracy(&state.model, &id_test)?;

    let finetuned = match method {
        OodMethod::Posthoc(_) => None,
        OodMethod::Finetune(config) => Some(finetune(
            &state.model,
            &prep.stream,
            t,
            &state.memory_before,
            config,
            &prep.root.derive("finetune").derive(t),
        )?),
    };
    let model = match &finetuned {
        Some(ft) => ft.scoring_model(&state.model),
        None => ScoringModel::new(&state.model.extractor, &state.model.head),
    };
    let scorer = method.scorer();
    let fit = posthoc::fit(&scorer, &model, train_plus(prep, state)?.features())?;
    let id = posthoc::score_rows(&scorer, &fit, &model, id_test.features(), exec)?;

    let sets = prep.ood.sets();
    let ood = par::map(exec, sets, |set| -> Result<(String, OodTag, Vec<f64>)> {
        let subset = ood_subset(&set.data, t, total, &prep.root.derive("ood").derive(&set.name))?;
        let scores = posthoc::score_rows(&scorer, &fit, &model, subset.features(), Exec::Sequential)?;
        Ok((set.name.clone(), set.tag, scores))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(StepScores {
        step: t,
        accuracy,
        id,
        ood,
        finetuned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub seed: u64,
    pub step: usize,
    pub ood_dataset: String,
    pub tag: OodTag,
    pub acc: f64,
    pub auroc: f64,
    pub fpr95: f64,
    pub ap: f64,
    pub n_id_test: usize,
    pub n_ood_test: usize,
}

impl StepScores {
    pub fn records(&self, seed: u64) -> Result<Vec<StepRecord>> {
        self.ood
            .iter()
            .map(|(name, tag, scores)| {
                let split = ScoredSplit::new(self.id.clone(), scores.clone());
                let m = metrics::evaluate(&split)?;
                Ok(StepRecord {
                    seed,
                    step: self.step,
                    ood_dataset: name.clone(),
                    tag: *tag,
                    acc: self.accuracy,
                    auroc: m.auroc,
                    fpr95: m.fpr95,
                    ap: m.ap,
                    n_id_test: self.id.len(),
                    n_ood_test: scores.len(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSpread {
    pub mean: f64,
    /// Sample standard deviation across seeds; zero for a single seed.
    pub std: f64,
}

impl MeanSpread {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Means over seeds and OOD datasets at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAggregate {
    pub step: usize,
    pub acc: f64,
    pub auroc: f64,
    pub fpr95: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagAggregate {
    pub auroc: f64,
    pub fpr95: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub effective_seeds: usize,
    pub per_step: Vec<StepAggregate>,
    /// Means of the per-step values.
    pub overall: StepAggregate,
    pub near: Option<TagAggregate>,
    pub far: Option<TagAggregate>,
    /// Over-step means computed per seed, then summarized across seeds.
    pub seed_acc: MeanSpread,
    pub seed_auroc: MeanSpread,
    pub seed_fpr95: MeanSpread,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

/// Aggregate raw records. `None` when there are no records.
pub fn aggregate(records: &[StepRecord]) -> Option<Aggregates> {
    if records.is_empty() {
        return None;
    }
    let mut by_step: BTreeMap<usize, Vec<&StepRecord>> = BTreeMap::new();
    let mut by_seed: BTreeMap<u64, BTreeMap<usize, Vec<&StepRecord>>> = BTreeMap::new();
    for r in records {
        by_step.entry(r.step).or_default().push(r);
        by_seed.entry(r.seed).or_default().entry(r.step).or_default().push(r);
    }
    let step_agg = |step: usize, rs: &[&StepRecord]| {
        // Accuracy appears once per (seed, step); average over seeds.
        let mut acc_by_seed: BTreeMap<u64, f64> = BTreeMap::new();
        for r in rs {
            acc_by_seed.insert(r.seed, r.acc);
        }
        StepAggregate {
            step,
            acc: mean(acc_by_seed.values().copied()),
            auroc: mean(rs.iter().map(|r| r.auroc)),
            fpr95: mean(rs.iter().map(|r| r.fpr95)),
            ap: mean(rs.iter().map(|r| r.ap)),
        }
    };
    let per_step: Vec<StepAggregate> = by_step.iter().map(|(&s, rs)| step_agg(s, rs)).collect();
    let overall = StepAggregate {
        step: per_step.len(),
        acc: mean(per_step.iter().map(|s| s.acc)),
        auroc: mean(per_step.iter().map(|s| s.auroc)),
        fpr95: mean(per_step.iter().map(|s| s.fpr95)),
        ap: mean(per_step.iter().map(|s| s.ap)),
    };
    let tag_agg = |tag: OodTag| {
        let rs: Vec<&StepRecord> = records.iter().filter(|r| r.tag == tag).collect();
        (!rs.is_empty()).then(|| TagAggregate {
            auroc: mean(rs.iter().map(|r| r.auroc)),
            fpr95: mean(rs.iter().map(|r| r.fpr95)),
            ap: mean(rs.iter().map(|r| r.ap)),
        })
    };
    let per_seed: Vec<StepAggregate> = by_seed
        .values()
        .map(|steps| {
            let s: Vec<StepAggregate> = steps.iter().map(|(&t, rs)| step_agg(t, rs)).collect();
            StepAggregate {
                step: s.len(),
                acc: mean(s.iter().map(|a| a.acc)),
                auroc: mean(s.iter().map(|a| a.auroc)),
                fpr95: mean(s.iter().map(|a| a.fpr95)),
                ap: mean(s.iter().map(|a| a.ap)),
            }
        })
        .collect();
    Some(Aggregates {
        effective_seeds: by_seed.len(),
        per_step,
        overall,
        near: tag_agg(OodTag::Near),
        far: tag_agg(OodTag::Far),
        seed_acc: MeanSpread::of(&per_seed.iter().map(|s| s.acc).collect::<Vec<_>>()),
        seed_auroc: MeanSpread::of(&per_seed.iter().map(|s| s.auroc).collect::<Vec<_>>()),
        seed_fpr95: MeanSpread::of(&per_seed.iter().map(|s| s.fpr95).collect::<Vec<_>>()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cil_method: String,
    pub ood_method: String,
    pub step_size: usize,
    pub seeds: Vec<u64>,
    pub records: Vec<StepRecord>,
    pub failures: Vec<SeedFailure>,
    pub aggregates: Option<Aggregates>,
    /// Whether `aggregates` matches a recomputation from `records`.
    pub self_consistent: bool,
}

impl BenchmarkReport {
    pub fn new(cfg: &RunConfig, records: Vec<StepRecord>, failures: Vec<SeedFailure>) -> Self {
        let aggregates = aggregate(&records);
        let mut report = Self {
            cil_method: cfg.cil.method.name().to_string(),
            ood_method: cfg.ood.name().to_string(),
            step_size: cfg.step_size,
            seeds: cfg.seeds.clone(),
            records,
            failures,
            aggregates,
            self_consistent: false,
        };
        report.self_consistent = report.check_consistency();
        report
    }

    pub fn check_consistency(&self) -> bool {
        aggregate(&self.records) == self.aggregates
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// A per-step table followed by a one-row summary in the usual
    /// near/far/average layout. Values are percentages.
    pub fn to_markdown(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut s = format!(
            "# {} on {} (step size {}, seeds {:?})\n\n",
            self.ood_method, self.cil_method, self.step_size, self.seeds
        );
        let Some(agg) = &self.aggregates else {
            s.push_str("No successful seeds.\n");
            return s;
        };
        s.push_str("| Step | ACC | AUROC | FPR95 | AP |\n|---:|---:|---:|---:|---:|\n");
        for a in &agg.per_step {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                a.step,
                pct(a.acc),
                pct(a.auroc),
                pct(a.fpr95),
                pct(a.ap)
            ));
        }
        let tag = |t: &Option<TagAggregate>| match t {
            Some(t) => (pct(t.auroc), pct(t.fpr95)),
            None => ("-".into(), "-".into()),
        };
        let (near_auc, near_fpr) = tag(&agg.near);
        let (far_auc, far_fpr) = tag(&agg.far);
        s.push_str(&format!(
            "\n| Method | CIL | Near AUROC | Near FPR95 | Far AUROC | Far FPR95 | Avg AUROC | Avg FPR95 | ACC |\n\
             |---|---|---:|---:|---:|---:|---:|---:|---:|\n\
             | {} | {} | {near_auc} | {near_fpr} | {far_auc} | {far_fpr} | {} ± {} | {} ± {} | {} ± {} |\n",
            self.ood_method,
            self.cil_method,
            pct(agg.seed_auroc.mean),
            pct(agg.seed_auroc.std),
            pct(agg.seed_fpr95.mean),
            pct(agg.seed_fpr95.std),
            pct(agg.seed_acc.mean),
            pct(agg.seed_acc.std),
        ));
        s.push_str(&format!("\nEffective seeds: {}\n", agg.effective_seeds));
        for f in &self.failures {
            s.push_str(&format!("\nSeed {} failed ({:?}): {}\n", f.seed, f.kind, f.message));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
        }
    }

    pub fn render(self, report: &BenchmarkReport) -> Result<String> {
        match self {
            ReportFormat::Json => report.to_json(),
            ReportFormat::Csv => report.to_csv(),
            ReportFormat::Markdown => Ok(report.to_markdown()),
        }
    }
}

/// Write the report in each format into `dir`.
pub fn emit_report(report: &BenchmarkReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    formats
        .iter()
        .map(|f| {
            let path = dir.join(f.file_name());
            std::fs::write(&path, f.render(report)?).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Checkpoints and training logs for one seed.
fn write_artifacts(dir: &Path, states: &[StepState], scores: &[StepScores]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cil_log = Vec::new();
    let mut ft_log = Vec::new();
    for (state, sc) in states.iter().zip(scores) {
        state
            .model
            .head
            .save(dir.join(format!("cil_head_step{}.och", state.step)))?;
        cil_log.extend(state.log.iter().cloned());
        if let Some(ft) = &sc.finetuned {
            ft.head.save(dir.join(format!("ood_head_step{}.och", state.step)))?;
            ft_log.extend(ft.log.iter().cloned());
        }
    }
    write_jsonl(&dir.join("cil_log.jsonl"), &cil_log)?;
    if !ft_log.is_empty() {
        write_jsonl(&dir.join("finetune_log.jsonl"), &ft_log)?;
    }
    Ok(())
}

/// Every step of one seed, scored with the configured method.
pub fn run_seed(cfg: &RunConfig, data: &BenchmarkData, seed: u64, exec: Exec) -> Result<Vec<StepRecord>> {
    let prep = prepare(cfg, data, seed)?;
    let states = cil_trajectory(&prep, cfg)?;
    let scores = par::map(exec, &states, |s| score_step(&prep, s, &cfg.ood, exec))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if let Some(out) = &cfg.output_dir {
        write_artifacts(&out.join(format!("seed_{seed}")), &states, &scores)?;
    }
    let mut records = Vec::new();
    for s in &scores {
        records.extend(s.records(seed)?);
    }
    Ok(records)
}

/// Run every seed. A failing seed is recorded and the others proceed; data
/// that fails to load aborts the whole run.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let exec = cfg.exec();
    let shared = match &cfg.data {
        DataSource::Synthetic { reseed: true, .. } => None,
        _ => Some(load_data(cfg, cfg.seeds[0])?),
    };
    let body = || {
        par::map(exec, &cfg.seeds, |&seed| {
            let data = match &shared {
                Some(d) => std::borrow::Cow::Borrowed(d),
                None => std::borrow::Cow::Owned(load_data(cfg, seed)?),
            };
            run_seed(cfg, &data, seed, exec)
        })
    };
    let results = match cfg.threads {
        Some(n) => par::with_threads(n, body),
        None => body(),
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(rs) => records.extend(rs),
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    kind: e.kind(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(BenchmarkReport::new(cfg, records, failures))
}
