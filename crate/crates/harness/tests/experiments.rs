use std::path::Path;

use dynalign::snn::{NetworkModel, UnitKind};
use dynalign::tasks::gen_blobs;
use dynalign_harness::config::{
    AttractorSpec, DatasetSpec, ExperimentConfig, Mode, NetworkSpec, ReportSpec, RlSpec, SplitSpec, SweepSpec,
    TheorySpec,
};
use dynalign_harness::experiments::{
    run_attractor_compare, run_metrics_report, run_rl, run_sweep, run_theory_table, Context,
};
use dynalign_harness::records::{aggregate, read_records, Aggregate, RunRecord};
use dynalign_harness::HarnessError;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: "tiny".into(),
        seeds: vec![0, 1],
        dataset: DatasetSpec::Blobs {
            n: 200,
            d: 3,
            classes: 3,
            spread: 0.1,
            seed: 5,
            split: SplitSpec::default(),
        },
        network: NetworkSpec { hidden: vec![8] },
        ..ExperimentConfig::default()
    };
    cfg.train.max_epochs = 3;
    cfg
}

fn strip_time(mut rs: Vec<RunRecord>) -> Vec<RunRecord> {
    rs.iter_mut().for_each(|r| r.wall_time = 0.0);
    rs
}

fn sweep_cfg(deltas: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        sweep: Some(SweepSpec {
            deltas,
            twin: true,
            deletion: vec![0.4],
            deletion_reps: 2,
        }),
        ..tiny()
    }
}

fn run_sweep_in(dir: &Path, cfg: ExperimentConfig, jobs: usize) -> Vec<RunRecord> {
    let ctx = Context::new(cfg, dir, jobs).unwrap();
    run_sweep(&ctx).unwrap();
    read_records(&dir.join("records.jsonl")).unwrap()
}

#[test]
fn sweep_is_reproducible_and_keeps_low_accuracy_points() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = sweep_cfg(vec![0.15, 10.0]);
    let ra = strip_time(run_sweep_in(a.path(), cfg.clone(), 1));
    let mut rb = strip_time(run_sweep_in(b.path(), cfg.clone(), 2));
    // Worker order may differ; records are identical as a set.
    rb.sort_by_key(|x| (x.point.label.clone(), x.seed));
    let mut ra_sorted = ra.clone();
    ra_sorted.sort_by_key(|x| (x.point.label.clone(), x.seed));
    assert_eq!(ra_sorted, rb);
    assert_eq!(ra.len(), 3 * 2);
    assert!(ra.iter().all(|r| r.config_hash == cfg.hash() && r.is_ok()));
    let low = ra.iter().find(|r| r.point.delta == Some(0.15)).unwrap();
    assert!(low.accuracy.is_some());
    let d = low.dynamics.unwrap();
    assert!((d.lambda_sum + 0.3).abs() < 1e-6);
    assert!(low.extra.contains_key("deletion_acc_0.4"));
    for f in [
        "summary.csv",
        "plotdata/accuracy_vs_delta.csv",
        "plotdata/spikes_vs_lambda_sum.csv",
    ] {
        assert!(a.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn aggregates_are_recomputable_from_rows() {
    let dir = tempfile::tempdir().unwrap();
    let runs = run_sweep_in(dir.path(), sweep_cfg(vec![2.0]), 1);
    for e in aggregate(&runs) {
        for (name, agg) in &e.aggregates {
            let vals: Vec<f64> = e.runs.iter().filter_map(|r| r.metric(name)).collect();
            let again = Aggregate::of(&vals).unwrap();
            assert!((again.mean - agg.mean).abs() <= 1e-12);
            assert!((again.std - agg.std).abs() <= 1e-12);
        }
    }
}

#[test]
fn sweep_lyapunov_sums_follow_minus_two_delta() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sweep_cfg(vec![-1.0, 0.3, 4.0]);
    cfg.seeds = vec![0];
    cfg.sweep.as_mut().unwrap().twin = false;
    let runs = run_sweep_in(dir.path(), cfg, 1);
    for r in runs {
        let d = r.point.delta.unwrap();
        assert!((r.dynamics.unwrap().lambda_sum + 2.0 * d).abs() < 1e-6);
    }
}

#[test]
fn attractor_records_carry_lorenz_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seeds: vec![0],
        attractors: Some(AttractorSpec {
            systems: vec!["lorenz".into()],
            t_max: vec![2.0],
            n_steps: vec![1, 3],
        }),
        ..tiny()
    };
    let ctx = Context::new(cfg, dir.path(), 1).unwrap();
    let exps = run_attractor_compare(&ctx).unwrap();
    assert_eq!(exps.len(), 2);
    for e in &exps {
        assert!((e.dynamics.unwrap().lambda_sum + 13.667).abs() < 0.1);
    }
    let spikes = |n: usize| {
        exps.iter()
            .find(|e| e.point.n_steps == Some(n))
            .and_then(|e| e.metric("test_spikes"))
            .unwrap()
            .mean
    };
    assert!(spikes(3) > spikes(1));
}

#[test]
fn theory_table_factors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        theory: Some(TheorySpec {
            mc_duration: 0.0,
            ..TheorySpec::default()
        }),
        ..tiny()
    };
    let ctx = Context::new(cfg, dir.path(), 1).unwrap();
    let exps = run_theory_table(&ctx).unwrap();
    let factor = |ratio: f64| {
        exps.iter()
            .find(|e| e.metric("ratio").map(|a| a.mean) == Some(ratio))
            .and_then(|e| e.metric("factor"))
            .unwrap()
            .mean
    };
    for (ratio, want) in [(0.0, 1.0), (0.025, 0.976), (0.083, 0.923), (0.8, 0.556)] {
        assert!((factor(ratio) - want).abs() < 5e-4, "ratio {ratio}");
    }
    let tau = exps.iter().find(|e| e.point.label == "tau_m").unwrap();
    assert!((tau.metric("tau_m").unwrap().mean - 31.19).abs() < 0.01);
}

#[test]
fn rl_records_returns_per_mode_and_history_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = RlSpec {
        modes: vec![Mode::spiking("expansive", -1.5), Mode::twin()],
        hidden: vec![8],
        ..RlSpec::default()
    };
    spec.config.episodes = 5;
    let cfg = ExperimentConfig {
        seeds: vec![3],
        rl: Some(spec),
        ..tiny()
    };
    let ctx = Context::new(cfg, dir.path(), 1).unwrap();
    let exps = run_rl(&ctx).unwrap();
    assert_eq!(exps.len(), 2);
    for e in &exps {
        assert!(e.metric("final_return").unwrap().mean >= 1.0);
    }
    assert!(dir.path().join("rl/expansive_seed3.jsonl").exists());
    assert!(dir.path().join("rl/mlp_seed3.jsonl").exists());
}

#[test]
fn report_requires_an_existing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        report: Some(ReportSpec {
            checkpoint: dir.path().join("nope.bin"),
            delta: None,
            samples: 50,
            seed: 0,
        }),
        ..tiny()
    };
    let ctx = Context::new(cfg, dir.path(), 1).unwrap();
    assert!(matches!(run_metrics_report(&ctx), Err(HarnessError::Runtime(_))));
}

#[test]
fn report_on_untrained_network_probes_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    // Ten balanced classes; an untrained spiking net driven by a dissipative
    // encoding keeps little label information in its deepest layer.
    let ds = gen_blobs(400, 4, 10, 0.3, 9).unwrap();
    let (train, test) = ds.stratified_split(0.5, 1).unwrap();
    train.write_csv(&dir.path().join("train.csv")).unwrap();
    test.write_csv(&dir.path().join("test.csv")).unwrap();
    let ckpt = dir.path().join("model.bin");
    NetworkModel::new(&[12, 16, 16, 10], UnitKind::Lif, 4)
        .unwrap()
        .save(&ckpt)
        .unwrap();
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::Csv {
            train: dir.path().join("train.csv"),
            test: dir.path().join("test.csv"),
            val_fraction: 0.1,
            split_seed: 1,
        },
        report: Some(ReportSpec {
            checkpoint: ckpt,
            delta: Some(10.0),
            samples: 200,
            seed: 0,
        }),
        ..tiny()
    };
    let ctx = Context::new(cfg, dir.path(), 1).unwrap();
    let rep = run_metrics_report(&ctx).unwrap();
    assert_eq!(rep.probes.len(), 2);
    assert!(rep.accuracy < 0.3, "untrained accuracy {}", rep.accuracy);
    assert!(dir.path().join("report.json").exists());
    assert_eq!(rep.activity.firing_rate.len(), 3);
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
