//! Directional properties of the benchmark loop on small synthetic suites.

use opencil_core::cil::{argmax, evaluate_accuracy, CilConfig};
use opencil_core::data::OodTag;
use opencil_core::finetune::{finetune, BerConfig, FinetuneConfig, FinetuneMethod, HingeOrientation};
use opencil_core::model::ExtractorSpec;
use opencil_core::par::Exec;
use opencil_core::posthoc::Scorer;
use opencil_core::protocol::{
    cil_trajectory, load_data, prepare, run_benchmark, score_step, ClassOrderSpec, DataSource, OodMethod, RunConfig,
};
use opencil_core::synthgen::SynthSpec;

fn config(spec: SynthSpec, step_size: usize, budget: usize, seeds: Vec<u64>) -> RunConfig {
    RunConfig {
        data: DataSource::Synthetic { spec, reseed: true },
        step_size,
        class_order: ClassOrderSpec::default(),
        memory_budget: budget,
        extractor: ExtractorSpec::Relu,
        cil: CilConfig::default(),
        ood: OodMethod::Posthoc(Scorer::energy()),
        seeds,
        output_dir: None,
        threads: None,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn reported_accuracy_is_the_mean_over_seen_classes() {
    let spec = SynthSpec {
        num_classes: 6,
        n_train: 60,
        n_test: 20,
        n_ood: 100,
        ..SynthSpec::default()
    };
    let cfg = config(spec, 2, 60, vec![3]);
    let report = run_benchmark(&cfg).unwrap();
    let agg = report.aggregates.unwrap();

    let data = load_data(&cfg, 3).unwrap();
    let prep = prepare(&cfg, &data, 3).unwrap();
    let by_hand: Vec<f64> = cil_trajectory(&prep, &cfg)
        .unwrap()
        .iter()
        .map(|s| evaluate_accuracy(&s.model, &prep.stream.test_union(s.step).unwrap()).unwrap())
        .collect();
    assert_eq!(by_hand.len(), 3);
    for (step, acc) in agg.per_step.iter().zip(&by_hand) {
        assert!(
            (step.acc - acc).abs() < 1e-12,
            "step {}: {} vs {acc}",
            step.step,
            step.acc
        );
    }
    assert!((agg.overall.acc - mean(&by_hand)).abs() < 1e-12);
}

#[test]
fn without_replay_first_task_accuracy_never_recovers() {
    let spec = SynthSpec {
        num_classes: 10,
        n_train: 60,
        n_test: 20,
        n_ood: 100,
        ..SynthSpec::default()
    };
    let seeds: Vec<u64> = (0..5).collect();
    let cfg = config(spec, 2, 0, seeds.clone());
    let mut curve = vec![0.0; 5];
    for &seed in &seeds {
        let data = load_data(&cfg, seed).unwrap();
        let prep = prepare(&cfg, &data, seed).unwrap();
        let first = &prep.stream.task(1).unwrap().test;
        for s in cil_trajectory(&prep, &cfg).unwrap() {
            curve[s.step - 1] += evaluate_accuracy(&s.model, first).unwrap() / seeds.len() as f64;
        }
    }
    for w in curve.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{curve:?}");
    }
    assert!(curve[4] < curve[0], "{curve:?}");
}

#[test]
fn detection_drift_settles_while_accuracy_keeps_falling() {
    let cfg = config(SynthSpec::default(), 2, 2000, (0..5).collect());
    let agg = run_benchmark(&cfg).unwrap().aggregates.unwrap();
    let acc: Vec<f64> = agg.per_step.iter().map(|s| s.acc).collect();
    let auc: Vec<f64> = agg.per_step.iter().map(|s| s.auroc).collect();
    assert_eq!(acc.len(), 10);
    for w in acc.windows(2) {
        assert!(w[1] < w[0], "{acc:?}");
    }
    let drift: Vec<f64> = auc.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let third = drift.len() / 3;
    let early = mean(&drift[..third]);
    let late = mean(&drift[drift.len() - third..]);
    assert!(late < early, "early {early} late {late} from {auc:?}");
}

#[test]
fn tight_clusters_are_learned_exactly() {
    let spec = SynthSpec {
        num_classes: 4,
        sigma: 0.01,
        n_train: 50,
        n_test: 20,
        n_ood: 100,
        ..SynthSpec::default()
    };
    let cfg = config(spec, 4, 0, vec![0]);
    let data = load_data(&cfg, 0).unwrap();
    let prep = prepare(&cfg, &data, 0).unwrap();
    let states = cil_trajectory(&prep, &cfg).unwrap();
    assert_eq!(states.len(), 1);
    let train = &prep.stream.task(1).unwrap().train;
    assert_eq!(evaluate_accuracy(&states[0].model, train).unwrap(), 1.0);
}

#[test]
fn distant_far_sets_are_separated_from_the_first_step() {
    let spec = SynthSpec {
        num_classes: 8,
        sigma: 0.1,
        radius: 5.0,
        r_far: 50.0,
        n_ood: 400,
        ..SynthSpec::default()
    };
    let cfg = config(spec, 4, 200, vec![0]);
    let report = run_benchmark(&cfg).unwrap();
    let far: Vec<f64> = report
        .records
        .iter()
        .filter(|r| r.step == 1 && r.tag == OodTag::Far)
        .map(|r| r.auroc)
        .collect();
    assert!(!far.is_empty());
    for auc in far {
        assert!(auc > 0.99, "{auc}");
    }
}

#[test]
fn plain_finetune_keeps_cil_accuracy() {
    let cfg = config(SynthSpec::default(), 4, 2000, vec![0]);
    let data = load_data(&cfg, 0).unwrap();
    let prep = prepare(&cfg, &data, 0).unwrap();
    let ft = FinetuneConfig::new(FinetuneMethod::Plain);
    for s in cil_trajectory(&prep, &cfg).unwrap() {
        let head = finetune(
            &s.model,
            &prep.stream,
            s.step,
            &s.memory_before,
            &ft,
            &prep.rng().derive("ft"),
        )
        .unwrap();
        let scoring = head.scoring_model(&s.model);
        let test = &prep.stream.test_union(s.step).unwrap();
        let hits = (0..test.len())
            .filter(|&i| argmax(&scoring.logits(test.row(i)).unwrap()) == test.labels()[i])
            .count();
        let ft_acc = hits as f64 / test.len() as f64;
        let cil_acc = evaluate_accuracy(&s.model, test).unwrap();
        assert!(
            (ft_acc - cil_acc).abs() <= 0.02,
            "step {}: {ft_acc} vs {cil_acc}",
            s.step
        );
    }
}

fn energy_gap(method: FinetuneMethod) -> f64 {
    let mut ft = FinetuneConfig::new(method);
    ft.scorer = Some(Scorer::energy());
    let mut cfg = config(SynthSpec::default(), 4, 2000, (0..5).collect());
    cfg.ood = OodMethod::finetune(ft);
    let mut gaps = Vec::new();
    for seed in cfg.seeds.clone() {
        let data = load_data(&cfg, seed).unwrap();
        let prep = prepare(&cfg, &data, seed).unwrap();
        for s in cil_trajectory(&prep, &cfg).unwrap() {
            let scores = score_step(&prep, &s, &cfg.ood, Exec::Parallel).unwrap();
            let ood: Vec<f64> = scores.ood.iter().flat_map(|(_, _, v)| v.iter().copied()).collect();
            gaps.push(mean(&scores.id) - mean(&ood));
        }
    }
    mean(&gaps)
}

#[test]
fn ber_widens_the_energy_gap_over_plain_finetuning() {
    let ber = FinetuneMethod::Ber(BerConfig {
        hinge_orientation: HingeOrientation::EnergyPaper,
        ..BerConfig::default()
    });
    let (plain, ber) = (energy_gap(FinetuneMethod::Plain), energy_gap(ber));
    assert!(ber > plain, "ber {ber} plain {plain}");
}
