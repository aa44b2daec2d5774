//! Sequential vs parallel throughput of the scoring and benchmark loops.
//!
//! Build with `--no-default-features` to compile rayon out entirely; both
//! modes then run the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use opencil_core::cil::CilConfig;
use opencil_core::finetune::{FinetuneConfig, FinetuneMethod};
use opencil_core::model::ExtractorSpec;
use opencil_core::par::Exec;
use opencil_core::posthoc::Scorer;
use opencil_core::protocol::{
    cil_trajectory, load_data, prepare, run_seed, score_step, ClassOrderSpec, DataSource, OodMethod, RunConfig,
};
use opencil_core::synthgen::SynthSpec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn config(ood: OodMethod) -> RunConfig {
    RunConfig {
        data: DataSource::Synthetic {
            spec: SynthSpec::default(),
            reseed: false,
        },
        step_size: 4,
        class_order: ClassOrderSpec::default(),
        memory_budget: 2000,
        extractor: ExtractorSpec::Relu,
        cil: CilConfig {
            epochs_per_task: 3,
            ..CilConfig::default()
        },
        ood,
        seeds: vec![0],
        output_dir: None,
        threads: None,
    }
}

fn scoring(c: &mut Criterion) {
    let cfg = config(OodMethod::Posthoc(Scorer::energy()));
    let data = load_data(&cfg, 0).unwrap();
    let prep = prepare(&cfg, &data, 0).unwrap();
    let states = cil_trajectory(&prep, &cfg).unwrap();
    let last = states.last().unwrap();

    let mut group = c.benchmark_group("score_step");
    group.sample_size(10);
    for scorer in [Scorer::energy(), Scorer::odin(), Scorer::nnguide()] {
        let method = OodMethod::Posthoc(scorer);
        for (mode, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(scorer.name(), mode), &exec, |b, &exec| {
                b.iter(|| score_step(&prep, last, &method, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn full_seed(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_seed");
    group.sample_size(10);
    for method in [
        OodMethod::Posthoc(Scorer::Msp),
        OodMethod::finetune(FinetuneConfig::new(FinetuneMethod::Ber(Default::default()))),
    ] {
        let cfg = config(method);
        let data = load_data(&cfg, 0).unwrap();
        for (mode, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(method.name(), mode), &exec, |b, &exec| {
                b.iter(|| run_seed(&cfg, &data, 0, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, scoring, full_seed);
criterion_main!(benches);
