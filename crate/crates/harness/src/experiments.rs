//! Experiment drivers. Each one expands its grid into points, runs the
//! points on a worker pool, appends one record per run as it finishes and
//! writes the summary and plot series at the end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dynalign::dynsys::{integrate, EncodingConfig, InitMap, State3, SystemParams};
use dynalign::encoders::{batch_encode, batch_encode_cached, EncoderSpec, InputSequence};
use dynalign::infodyn::{ais, ensemble_tau_corr};
use dynalign::lyapunov::{spectrum, LyapunovConfig, LyapunovSpectrum};
use dynalign::metrics::{
    activity_stats, count_reps, deletion_robustness, effective_dim, ib_plane, linear_probe, ActivityStats, IbPoint,
    ProbeResult,
};
use dynalign::snn::{evaluate, forward, train, NetworkModel, Split, TrainConfig, UnitKind};
use dynalign::tasks::{gen_binding, gen_blobs, pca_reduce, reinforce_train, write_rl_history, Dataset, PolicyInput};
use dynalign::theory::{
    effective_variance, siegert_rate, simulate_lif_rate, tau_m_from_beta, variance_factor, RateInputs,
};
use dynalign::Stream;

use crate::config::{DatasetSpec, ExperimentConfig, Mode, RlSpec, TheorySpec};
use crate::error::{config_err, HarnessError, Result};
use crate::records::{
    aggregate, series, write_plotdata, write_summary, Dynamics, ExperimentRecord, Point, RecordWriter, RunRecord,
};

/// Shared state of one experiment invocation.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
    pub jobs: usize,
    /// Directory for cached encodings; `None` encodes in memory.
    pub cache: Option<PathBuf>,
    writer: RecordWriter,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: &Path, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        let writer = RecordWriter::open(out)?;
        Ok(Context {
            hash: cfg.hash(),
            cfg,
            out: out.to_path_buf(),
            jobs: jobs.max(1),
            cache: None,
            writer,
        })
    }

    fn record(&self, experiment: &str, seed: u64, point: Point) -> RunRecord {
        RunRecord::new(experiment, &self.hash, seed, point)
    }

    fn emit(&self, r: RunRecord) -> Result<RunRecord> {
        self.writer.append(&r)?;
        Ok(r)
    }

    fn pool<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| HarnessError::Runtime(format!("worker pool: {e}")))?;
        Ok(pool.install(|| items.par_iter().map(&f).collect()))
    }

    fn finish(&self, runs: &[RunRecord], plots: &[(&str, Vec<[f64; 4]>)]) -> Result<Vec<ExperimentRecord>> {
        let exps = aggregate(runs);
        write_summary(&self.out.join("summary.csv"), &exps)?;
        for (name, rows) in plots {
            write_plotdata(&self.out, name, rows)?;
        }
        Ok(exps)
    }
}

/// Train/validation/test partitions of a labelled dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Cumulative explained variance of the PCA reduction, if one was applied.
    pub pca_explained: Option<f64>,
}

pub fn prepare(spec: &DatasetSpec) -> Result<Prepared> {
    match spec {
        DatasetSpec::Blobs {
            n,
            d,
            classes,
            spread,
            seed,
            split,
        } => {
            let ds = gen_blobs(*n, *d, *classes, *spread, *seed)?;
            let (rest, test) = ds.stratified_split(split.test_fraction, split.seed)?;
            let (train, val) = rest.stratified_split(split.val_fraction, split.seed.wrapping_add(1))?;
            Ok(Prepared {
                train,
                val,
                test,
                pca_explained: None,
            })
        }
        DatasetSpec::Csv {
            train,
            test,
            val_fraction,
            split_seed,
        } => {
            let rest = Dataset::read_csv(train)?;
            let test = Dataset::read_csv(test)?;
            if rest.d != test.d {
                return Err(config_err(format!(
                    "train has {} features, test has {}",
                    rest.d, test.d
                )));
            }
            let classes = rest.n_classes.max(test.n_classes);
            let relabel = |d: Dataset| Dataset::new(d.features, d.labels, d.d, classes, d.note);
            let (rest, test) = (relabel(rest)?, relabel(test)?);
            let (train, val) = rest.stratified_split(*val_fraction, *split_seed)?;
            Ok(Prepared {
                train,
                val,
                test,
                pca_explained: None,
            })
        }
        DatasetSpec::Binding {
            n,
            dim,
            noise,
            pca_dims,
            seed,
            split,
        } => {
            let ds = gen_binding(*n, *dim, *noise, *seed)?;
            let (rest, test) = ds.stratified_split(split.test_fraction, split.seed)?;
            let (z, red) = pca_reduce(&rest.features, rest.len(), rest.d, *pca_dims)?;
            let zt = red.transform(&test.features);
            let note = format!("{} | pca {dim}->{pca_dims}", ds.note);
            let rest = Dataset::new(z, rest.labels, *pca_dims, 2, note.clone())?;
            let test = Dataset::new(zt, test.labels, *pca_dims, 2, note)?;
            let (train, val) = rest.stratified_split(split.val_fraction, split.seed.wrapping_add(1))?;
            Ok(Prepared {
                train,
                val,
                test,
                pca_explained: red.cumulative_explained.last().copied(),
            })
        }
    }
}

/// Encoded partitions, each row aligned with the matching dataset row.
pub struct Encoded {
    pub train: Vec<InputSequence>,
    pub val: Vec<InputSequence>,
    pub test: Vec<InputSequence>,
}

/// Mixed-oscillator encoding for spiking modes, static features otherwise.
pub fn mode_encoder(delta: Option<f64>, enc: &EncodingConfig) -> EncoderSpec {
    match delta {
        Some(d) => EncoderSpec::dynamical(SystemParams::mixed_oscillator(d), *enc),
        None => EncoderSpec::Default { steps: 1 },
    }
}

pub fn mode_unit(delta: Option<f64>) -> UnitKind {
    if delta.is_some() {
        UnitKind::Lif
    } else {
        UnitKind::Relu
    }
}

pub fn encode_splits(p: &Prepared, spec: &EncoderSpec, cache: Option<&Path>) -> Result<Encoded> {
    let enc = |d: &Dataset| match cache {
        Some(dir) => batch_encode_cached(spec, &d.features, d.d, 0, dir),
        None => batch_encode(spec, &d.features, d.d, 0),
    };
    Ok(Encoded {
        train: enc(&p.train)?,
        val: enc(&p.val)?,
        test: enc(&p.test)?,
    })
}

pub fn layer_sizes(input: usize, hidden: &[usize], outputs: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(outputs);
    s
}

pub struct RunOutcome {
    pub model: NetworkModel,
    pub accuracy: f64,
    pub convergence_epoch: usize,
    pub total_spikes: f64,
    pub test_spikes: f64,
    pub epochs: usize,
}

/// Train a fresh network seeded with `seed` and evaluate it on the test split.
pub fn train_run(
    p: &Prepared,
    enc: &Encoded,
    unit: UnitKind,
    hidden: &[usize],
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<RunOutcome> {
    let width = enc
        .train
        .first()
        .map(|s| s.width)
        .ok_or_else(|| config_err("empty training split"))?;
    let model = NetworkModel::new(&layer_sizes(width, hidden, p.train.n_classes), unit, seed)?;
    let cfg = TrainConfig { seed, ..*train_cfg };
    let out = train(
        &model,
        Split::new(&enc.train, &p.train.labels)?,
        Split::new(&enc.val, &p.val.labels)?,
        &cfg,
    )?;
    let ev = evaluate(&out.model, Split::new(&enc.test, &p.test.labels)?)?;
    Ok(RunOutcome {
        accuracy: ev.accuracy,
        convergence_epoch: out.convergence_epoch,
        total_spikes: out.spikes_at_convergence,
        test_spikes: ev.spikes,
        epochs: out.history.len(),
        model: out.model,
    })
}

/// Start of every Lyapunov estimate; inside the basin of all seven systems.
pub const LYAPUNOV_START: [f64; 3] = [0.1, 0.0, 0.0];
pub const AIS_STEPS: usize = 800;
pub const AIS_BINS: usize = 8;
pub const TAU_WINDOW: f64 = 25.0;
pub const TAU_ENSEMBLE: usize = 10;

/// Spectrum settings per system: chaotic attractors are observed for 100
/// time units after a 10-unit transient; mixed oscillators for 10 units from
/// the start, since the expansive ones leave any bounded region.
pub fn lyapunov_config(sys: &SystemParams) -> LyapunovConfig {
    if sys.delta().is_some() {
        LyapunovConfig::new(10.0)
    } else {
        LyapunovConfig {
            transient_steps: 1000,
            ..LyapunovConfig::new(100.0)
        }
    }
}

pub fn system_spectrum(sys: &SystemParams) -> Result<LyapunovSpectrum> {
    Ok(spectrum(
        sys,
        State3::from_array(LYAPUNOV_START),
        &lyapunov_config(sys),
    )?)
}

/// Features `0.05, 0.15, ..., 0.95` mapped through the encoder's init map.
pub fn tau_features() -> Vec<f64> {
    (0..TAU_ENSEMBLE)
        .map(|i| (i as f64 + 0.5) / TAU_ENSEMBLE as f64)
        .collect()
}

pub fn system_dynamics(sys: &SystemParams, init: &InitMap, h: f64) -> Result<Dynamics> {
    let sp = system_spectrum(sys)?;
    let traj = integrate(sys, init.apply(1.0), h, AIS_STEPS)?;
    let a = ais(&traj, AIS_BINS)?;
    let tau = ensemble_tau_corr(sys, &tau_features(), init, TAU_WINDOW, h)?;
    Ok(Dynamics {
        lambda_max: sp.lambda_max,
        lambda_sum: sp.lambda_sum,
        ais: a.mean,
        tau_corr: tau.acf.tau_corr,
        tau_corr_exceeds_window: tau.acf.exceeds_window,
    })
}

fn delta_point(delta: Option<f64>, label: &str) -> Point {
    Point {
        label: label.into(),
        system: delta.map(|_| "mixed_oscillator".into()),
        delta,
        ..Default::default()
    }
}

fn fail_all(ctx: &Context, experiment: &str, point: &Point, err: &HarnessError) -> Result<Vec<RunRecord>> {
    ctx.cfg
        .seeds
        .iter()
        .map(|&s| {
            let mut r = ctx.record(experiment, s, point.clone());
            r.error = Some(err.to_string());
            ctx.emit(r)
        })
        .collect()
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn deletion_key(p: f64) -> String {
    format!("deletion_acc_{p}")
}

/// Delta sweep: per point, dynamics once, encoding once, then one trained
/// network per seed. The non-spiking twin is one extra point.
pub fn run_sweep(ctx: &Context) -> Result<Vec<ExperimentRecord>> {
    const EXP: &str = "sweep";
    let sweep = ctx
        .cfg
        .sweep
        .clone()
        .ok_or_else(|| config_err("sweep needs a [sweep] section"))?;
    let data = prepare(&ctx.cfg.dataset)?;
    let mut points: Vec<Point> = sweep
        .deltas
        .iter()
        .map(|&d| delta_point(Some(d), &format!("delta={d}")))
        .collect();
    if sweep.twin {
        points.push(delta_point(None, "mlp"));
    }
    let results = ctx.pool(&points, |point| -> Result<Vec<RunRecord>> {
        let t0 = Instant::now();
        let prep = (|| -> Result<(Option<Dynamics>, Encoded)> {
            let spec = mode_encoder(point.delta, &ctx.cfg.encoding);
            let dynamics = match point.delta {
                Some(d) => Some(system_dynamics(
                    &SystemParams::mixed_oscillator(d),
                    &ctx.cfg.encoding.init_map,
                    ctx.cfg.encoding.h,
                )?),
                None => None,
            };
            Ok((dynamics, encode_splits(&data, &spec, ctx.cache.as_deref())?))
        })();
        let (dynamics, enc) = match prep {
            Ok(v) => v,
            Err(e) => return fail_all(ctx, EXP, point, &e),
        };
        let shared = secs(t0);
        let mut out = Vec::new();
        for &seed in &ctx.cfg.seeds {
            let t0 = Instant::now();
            let mut r = ctx.record(EXP, seed, point.clone());
            r.dynamics = dynamics;
            let res = train_run(
                &data,
                &enc,
                mode_unit(point.delta),
                &ctx.cfg.network.hidden,
                &ctx.cfg.train,
                seed,
            )
            .and_then(|o| {
                if !sweep.deletion.is_empty() {
                    let split = Split::new(&enc.test, &data.test.labels)?;
                    for dp in deletion_robustness(&o.model, split, &sweep.deletion, sweep.deletion_reps, seed)? {
                        r.extra.insert(deletion_key(dp.p), dp.accuracy);
                    }
                }
                Ok(o)
            });
            match res {
                Ok(o) => {
                    r.accuracy = Some(o.accuracy);
                    r.convergence_epoch = Some(o.convergence_epoch);
                    r.total_spikes = Some(o.total_spikes);
                    r.extra.insert("test_spikes".into(), o.test_spikes);
                    r.extra.insert("epochs".into(), o.epochs as f64);
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r.wall_time = secs(t0) + shared / ctx.cfg.seeds.len() as f64;
            out.push(ctx.emit(r)?);
        }
        Ok(out)
    })?;
    let runs = flatten(results)?;
    let exps = aggregate(&runs);
    let by_delta = |e: &ExperimentRecord| e.point.delta;
    let by_sum = |e: &ExperimentRecord| e.dynamics.map(|d| d.lambda_sum);
    let dyn_rows = |f: fn(&Dynamics) -> f64| -> Vec<[f64; 4]> {
        exps.iter()
            .filter_map(|e| {
                let y = f(e.dynamics.as_ref()?);
                Some([e.point.delta?, y, y, y])
            })
            .collect()
    };
    ctx.finish(
        &runs,
        &[
            ("accuracy_vs_delta", series(&exps, by_delta, "accuracy")),
            ("spikes_vs_delta", series(&exps, by_delta, "total_spikes")),
            ("spikes_vs_lambda_sum", series(&exps, by_sum, "total_spikes")),
            ("convergence_vs_delta", series(&exps, by_delta, "convergence_epoch")),
            ("ais_vs_delta", dyn_rows(|d| d.ais)),
            ("tau_corr_vs_delta", dyn_rows(|d| d.tau_corr)),
            ("lambda_sum_vs_delta", dyn_rows(|d| d.lambda_sum)),
        ],
    )
}

fn flatten(results: Vec<Result<Vec<RunRecord>>>) -> Result<Vec<RunRecord>> {
    let mut runs = Vec::new();
    for r in results {
        runs.extend(r?);
    }
    Ok(runs)
}

/// Attractor comparison over `system x t_max x n_steps`.
pub fn run_attractor_compare(ctx: &Context) -> Result<Vec<ExperimentRecord>> {
    const EXP: &str = "attractors";
    let spec = ctx
        .cfg
        .attractors
        .clone()
        .ok_or_else(|| config_err("attractors needs an [attractors] section"))?;
    let data = prepare(&ctx.cfg.dataset)?;
    let mut points = Vec::new();
    for name in &spec.systems {
        for &t_max in &spec.t_max {
            for &n in &spec.n_steps {
                points.push(Point {
                    label: format!("{name} t_max={t_max} N={n}"),
                    system: Some(name.clone()),
                    delta: None,
                    t_max: Some(t_max),
                    n_steps: Some(n),
                });
            }
        }
    }
    let results = ctx.pool(&points, |point| -> Result<Vec<RunRecord>> {
        let t0 = Instant::now();
        let prep = (|| -> Result<(Dynamics, Encoded)> {
            let sys = SystemParams::from_name(point.system.as_deref().unwrap_or_default(), None)?;
            let enc_cfg = EncodingConfig {
                t_max: point.t_max.unwrap_or(ctx.cfg.encoding.t_max),
                n_steps: point.n_steps.unwrap_or(ctx.cfg.encoding.n_steps),
                ..ctx.cfg.encoding
            };
            let dynamics = system_dynamics(&sys, &enc_cfg.init_map, enc_cfg.h)?;
            let enc = encode_splits(&data, &EncoderSpec::dynamical(sys, enc_cfg), ctx.cache.as_deref())?;
            Ok((dynamics, enc))
        })();
        let (dynamics, enc) = match prep {
            Ok(v) => v,
            Err(e) => return fail_all(ctx, EXP, point, &e),
        };
        let shared = secs(t0);
        let mut out = Vec::new();
        for &seed in &ctx.cfg.seeds {
            let t0 = Instant::now();
            let mut r = ctx.record(EXP, seed, point.clone());
            r.dynamics = Some(dynamics);
            match train_run(
                &data,
                &enc,
                UnitKind::Lif,
                &ctx.cfg.network.hidden,
                &ctx.cfg.train,
                seed,
            ) {
                Ok(o) => {
                    r.accuracy = Some(o.accuracy);
                    r.convergence_epoch = Some(o.convergence_epoch);
                    r.total_spikes = Some(o.total_spikes);
                    r.extra.insert("test_spikes".into(), o.test_spikes);
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r.wall_time = secs(t0) + shared / ctx.cfg.seeds.len() as f64;
            out.push(ctx.emit(r)?);
        }
        Ok(out)
    })?;
    let runs = flatten(results)?;
    let exps = aggregate(&runs);
    let by_sum = |e: &ExperimentRecord| e.dynamics.map(|d| d.lambda_sum);
    let by_steps = |e: &ExperimentRecord| e.point.n_steps.map(|n| n as f64);
    ctx.finish(
        &runs,
        &[
            ("accuracy_vs_lambda_sum", series(&exps, by_sum, "accuracy")),
            ("spikes_vs_n_steps", series(&exps, by_steps, "test_spikes")),
        ],
    )
}

/// CartPole REINFORCE for every `mode x seed`; each run also writes its
/// episode history to `rl/<mode>_seed<seed>.jsonl`.
pub fn run_rl(ctx: &Context) -> Result<Vec<ExperimentRecord>> {
    const EXP: &str = "rl";
    let spec: RlSpec = ctx
        .cfg
        .rl
        .clone()
        .ok_or_else(|| config_err("rl needs an [rl] section"))?;
    let hist_dir = ctx.out.join("rl");
    fs::create_dir_all(&hist_dir)?;
    let items: Vec<(Mode, u64)> = spec
        .modes
        .iter()
        .flat_map(|m| ctx.cfg.seeds.iter().map(move |&s| (m.clone(), s)))
        .collect();
    let results = ctx.pool(&items, |(mode, seed)| -> Result<RunRecord> {
        let t0 = Instant::now();
        let mut r = ctx.record(EXP, *seed, delta_point(mode.delta, &mode.name));
        let res = (|| -> Result<dynalign::tasks::RlHistory> {
            let (input, width) = match mode.delta {
                Some(_) => {
                    let encoder = mode_encoder(mode.delta, &ctx.cfg.encoding);
                    let w = encoder.width(4);
                    (PolicyInput::Encoded { encoder }, w)
                }
                None => (PolicyInput::PassThrough, 4),
            };
            let policy = NetworkModel::new(&layer_sizes(width, &spec.hidden, 2), mode_unit(mode.delta), *seed)?;
            let cfg = dynalign::tasks::RlConfig {
                seed: *seed,
                ..spec.config.clone()
            };
            let (_, hist) = reinforce_train(&policy, &input, &cfg)?;
            write_rl_history(&hist_dir.join(format!("{}_seed{seed}.jsonl", mode.name)), &hist)?;
            Ok(hist)
        })();
        match res {
            Ok(h) => {
                r.extra
                    .insert("final_return".into(), h.final_mean(spec.config.solve_window));
                r.extra.insert("mean_spikes".into(), h.mean_spikes());
                r.extra.insert("solved".into(), h.solved_at.is_some() as u8 as f64);
                if let Some(e) = h.solved_at {
                    r.extra.insert("solved_at".into(), e as f64);
                }
            }
            Err(e) => r.error = Some(e.to_string()),
        }
        r.wall_time = secs(t0);
        ctx.emit(r)
    })?;
    let runs: Vec<RunRecord> = results.into_iter().collect::<Result<_>>()?;
    let exps = aggregate(&runs);
    let rows: Vec<[f64; 4]> = exps
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let a = e.metric("final_return")?;
            Some([i as f64, a.mean, a.mean - a.std, a.mean + a.std])
        })
        .collect();
    ctx.finish(&runs, &[("final_return_by_mode", rows)])
}

pub const PROBE_KEY: &str = "probe_accuracy";

/// Feature binding: one PCA-reduced dataset, every mode trained per seed.
/// The last hidden layer's test-set spike counts also get a linear probe.
pub fn run_binding(ctx: &Context) -> Result<Vec<ExperimentRecord>> {
    const EXP: &str = "binding";
    let spec = ctx
        .cfg
        .binding
        .clone()
        .ok_or_else(|| config_err("binding needs a [binding] section"))?;
    let data = prepare(&ctx.cfg.dataset)?;
    let results = ctx.pool(&spec.modes, |mode| -> Result<Vec<RunRecord>> {
        let point = delta_point(mode.delta, &mode.name);
        let t0 = Instant::now();
        let enc = match encode_splits(
            &data,
            &mode_encoder(mode.delta, &ctx.cfg.encoding),
            ctx.cache.as_deref(),
        ) {
            Ok(e) => e,
            Err(e) => return fail_all(ctx, EXP, &point, &e),
        };
        let shared = secs(t0);
        let mut out = Vec::new();
        for &seed in &ctx.cfg.seeds {
            let t0 = Instant::now();
            let mut r = ctx.record(EXP, seed, point.clone());
            let res = train_run(
                &data,
                &enc,
                mode_unit(mode.delta),
                &ctx.cfg.network.hidden,
                &ctx.cfg.train,
                seed,
            )
            .and_then(|o| {
                let traces = enc
                    .test
                    .iter()
                    .map(|x| forward(&o.model, x))
                    .collect::<dynalign::Result<Vec<_>>>()?;
                let (reps, w) = count_reps(&traces, o.model.n_layers() - 2);
                let probe = linear_probe(&reps, w, &data.test.labels, seed)?;
                Ok((o, probe))
            });
            match res {
                Ok((o, probe)) => {
                    r.accuracy = Some(o.accuracy);
                    r.convergence_epoch = Some(o.convergence_epoch);
                    r.total_spikes = Some(o.total_spikes);
                    r.extra.insert(PROBE_KEY.into(), probe.accuracy);
                    if let Some(v) = data.pca_explained {
                        r.extra.insert("pca_explained".into(), v);
                    }
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r.wall_time = secs(t0) + shared / ctx.cfg.seeds.len() as f64;
            out.push(ctx.emit(r)?);
        }
        Ok(out)
    })?;
    let runs = flatten(results)?;
    let exps = aggregate(&runs);
    let rows: Vec<[f64; 4]> = exps
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let a = e.metric("accuracy")?;
            Some([i as f64, a.mean, a.mean - a.std, a.mean + a.std])
        })
        .collect();
    ctx.finish(&runs, &[("accuracy_by_mode", rows)])
}

/// Closed-form tables: tau_m, effective-variance factors and firing rates
/// (with a Monte-Carlo cross-check when `mc_duration > 0`).
pub fn run_theory_table(ctx: &Context) -> Result<Vec<ExperimentRecord>> {
    const EXP: &str = "theory";
    let spec: TheorySpec = ctx.cfg.theory.clone().unwrap_or_default();
    let seed = ctx.cfg.seeds[0];
    let mut runs = Vec::new();
    let tau_m = tau_m_from_beta(spec.beta, spec.dt)?;
    let mut r = ctx.record(EXP, seed, Point::labelled("tau_m"));
    r.extra.insert("beta".into(), spec.beta);
    r.extra.insert("dt".into(), spec.dt);
    r.extra.insert("tau_m".into(), tau_m);
    runs.push(ctx.emit(r)?);
    let mut factor_rows = Vec::new();
    for &ratio in &spec.ratios {
        let mut r = ctx.record(EXP, seed, Point::labelled(format!("variance ratio={ratio}")));
        let f = variance_factor(ratio);
        r.extra.insert("ratio".into(), ratio);
        r.extra.insert("factor".into(), f);
        r.extra.insert(
            "effective_variance".into(),
            effective_variance(1.0, tau_m, ratio * tau_m)?,
        );
        factor_rows.push([ratio, f, f, f]);
        runs.push(ctx.emit(r)?);
    }
    let mut rate_rows = Vec::new();
    for (i, &[mu, sigma]) in spec.rate_points.iter().enumerate() {
        let t0 = Instant::now();
        let inputs = RateInputs {
            mu_v: mu,
            sigma_eff: sigma,
            v_th: 1.0,
            v_reset: 0.0,
            tau_m: 1.0,
        };
        let mut r = ctx.record(EXP, seed, Point::labelled(format!("rate mu={mu} sigma={sigma}")));
        r.extra.insert("mu".into(), mu);
        r.extra.insert("sigma".into(), sigma);
        let rate = siegert_rate(&inputs, 1e-10)?;
        r.extra.insert("siegert_rate".into(), rate.rate);
        let mut row = [mu, rate.rate, rate.rate, rate.rate];
        if spec.mc_duration > 0.0 {
            let mut rng = Stream::derive(seed, i as u64);
            let mc = simulate_lif_rate(&inputs, 1e-3, spec.mc_duration, &mut rng)?;
            r.extra.insert("mc_rate".into(), mc);
            row[2] = rate.rate.min(mc);
            row[3] = rate.rate.max(mc);
        }
        rate_rows.push(row);
        r.wall_time = secs(t0);
        runs.push(ctx.emit(r)?);
    }
    ctx.finish(&runs, &[("variance_factor", factor_rows), ("siegert_rate", rate_rows)])
}

/// Per-layer activity, information plane and probes of a saved network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub checkpoint: PathBuf,
    pub samples: usize,
    pub accuracy: f64,
    pub activity: ActivityStats,
    pub ib_plane: Vec<IbPoint>,
    pub probes: Vec<ProbeResult>,
    pub effective_dims: Vec<usize>,
}

pub fn run_metrics_report(ctx: &Context) -> Result<MetricsReport> {
    let spec = ctx
        .cfg
        .report
        .clone()
        .ok_or_else(|| config_err("report needs a [report] section"))?;
    if !spec.checkpoint.exists() {
        return Err(HarnessError::Runtime(format!(
            "checkpoint {} not found",
            spec.checkpoint.display()
        )));
    }
    let model = NetworkModel::load(&spec.checkpoint)?;
    let data = prepare(&ctx.cfg.dataset)?;
    let n = spec.samples.min(data.test.len());
    let idx: Vec<usize> = (0..n).collect();
    let test = data.test.subset(&idx)?;
    let seqs = batch_encode(&mode_encoder(spec.delta, &ctx.cfg.encoding), &test.features, test.d, 0)?;
    if seqs[0].width != model.input_dim() {
        return Err(config_err(format!(
            "checkpoint expects {} inputs, encoding gives {}",
            model.input_dim(),
            seqs[0].width
        )));
    }
    let traces = seqs
        .iter()
        .map(|x| forward(&model, x))
        .collect::<dynalign::Result<Vec<_>>>()?;
    let accuracy = evaluate(&model, Split::new(&seqs, &test.labels)?)?.accuracy;
    let hidden = model.n_layers() - 1;
    let layers: Vec<(Vec<f64>, usize)> = (0..hidden).map(|l| count_reps(&traces, l)).collect();
    let ib = ib_plane(&layers, (&test.features, test.d), &test.labels)?;
    let probes = layers
        .iter()
        .map(|(x, w)| linear_probe(x, *w, &test.labels, spec.seed))
        .collect::<dynalign::Result<Vec<_>>>()?;
    let effective_dims = layers
        .iter()
        .map(|(x, w)| effective_dim(x, n, *w))
        .collect::<dynalign::Result<Vec<_>>>()?;
    let report = MetricsReport {
        checkpoint: spec.checkpoint.clone(),
        samples: n,
        accuracy,
        activity: activity_stats(&traces)?,
        ib_plane: ib,
        probes,
        effective_dims,
    };
    fs::create_dir_all(&ctx.out)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    fs::write(ctx.out.join("report.json"), json)?;
    let rows: Vec<[f64; 4]> = report
        .ib_plane
        .iter()
        .map(|p| [p.i_tx, p.i_ty, p.i_ty, p.i_ty])
        .collect();
    write_plotdata(&ctx.out, "ib_plane", &rows)?;
    Ok(report)
}

/// Single training run on the configured dataset; saves `model.bin`.
pub fn run_train(ctx: &Context, delta: Option<f64>) -> Result<RunRecord> {
    let t0 = Instant::now();
    let data = prepare(&ctx.cfg.dataset)?;
    let seed = ctx.cfg.seeds[0];
    let label = delta.map(|d| format!("delta={d}")).unwrap_or_else(|| "mlp".into());
    let mut r = ctx.record("train", seed, delta_point(delta, &label));
    let enc = encode_splits(&data, &mode_encoder(delta, &ctx.cfg.encoding), ctx.cache.as_deref())?;
    let o = train_run(
        &data,
        &enc,
        mode_unit(delta),
        &ctx.cfg.network.hidden,
        &ctx.cfg.train,
        seed,
    )?;
    o.model.save(&ctx.out.join("model.bin"))?;
    r.accuracy = Some(o.accuracy);
    r.convergence_epoch = Some(o.convergence_epoch);
    r.total_spikes = Some(o.total_spikes);
    r.extra.insert("test_spikes".into(), o.test_spikes);
    r.wall_time = secs(t0);
    let r = ctx.emit(r)?;
    ctx.finish(std::slice::from_ref(&r), &[])?;
    Ok(r)
}
