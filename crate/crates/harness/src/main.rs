use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dynalign::dynsys::SystemParams;
use dynalign::encoders::{batch_encode, write_cache, CacheHeader};
use dynalign::infodyn::{ais, ensemble_tau_corr};
use dynalign::statfit::{mann_whitney_u, pearson, powerlaw_fit, sigmoid_fit};
use dynalign_harness::config::{AttractorSpec, BindingSpec, DatasetSpec, RlSpec, SweepSpec, TheorySpec};
use dynalign_harness::criteria::{self, Criterion};
use dynalign_harness::experiments::{self as exp, Context};
use dynalign_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "dynalign", version, about = "Dynamical-encoding spiking network experiments")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Evaluate the pass/fail checks that apply to the experiment; exit 3 on failure.
    #[arg(long, global = true)]
    check: bool,
    /// Cache encodings in this directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode the configured dataset and write the cache file.
    Encode(SystemArgs),
    /// Lyapunov spectrum of a system.
    Lyapunov(SystemArgs),
    /// Active information storage and autocorrelation time of a system.
    Ais(SystemArgs),
    /// Train one network; `--delta` selects a spiking oscillator mode.
    Train {
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<f64>,
    },
    /// Delta sweep over the mixed oscillator.
    Sweep,
    /// System x t_max x N grid over the chaotic attractors.
    Attractors,
    /// CartPole REINFORCE per mode and seed.
    Rl,
    /// Feature-binding task per mode and seed.
    Binding,
    /// Closed-form tables (tau_m, variance factors, firing rates).
    Theory,
    /// Activity, information-plane and probe report for a checkpoint.
    Report {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit a CSV with columns x,y.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: FitKind,
        /// Critical point for power-law fits.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        lambda_c: f64,
    },
}

#[derive(clap::Args)]
struct SystemArgs {
    #[arg(long, default_value = "mixed_oscillator")]
    system: String,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    Powerlaw,
    Sigmoid,
    Pearson,
    /// Mann-Whitney U between the x and y columns.
    MannWhitney,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    // A closed pipe (e.g. `| head`) is not a failure of the run.
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn report(checks: &[Criterion]) -> bool {
    for c in checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.pass)
}

fn context(cli: &Cli, cfg: ExperimentConfig) -> Result<Context> {
    let out = out_dir(cli, &cfg);
    let mut ctx = Context::new(cfg, &out, cli.jobs)?;
    ctx.cache = cli.cache.clone();
    eprintln!("writing to {}", out.display());
    Ok(ctx)
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Encode(a) => {
            let sys = SystemParams::from_name(&a.system, a.delta).map_err(|e| HarnessError::Config(e.to_string()))?;
            let spec = dynalign::encoders::EncoderSpec::dynamical(sys, cfg.encoding);
            let data = exp::prepare(&cfg.dataset)?;
            let out = out_dir(&cli, &cfg);
            std::fs::create_dir_all(&out)?;
            for (name, d) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
                let seqs = batch_encode(&spec, &d.features, d.d, 0)?;
                let header = CacheHeader {
                    shape: [seqs.len(), seqs[0].t, seqs[0].width],
                    dtype: "f64".into(),
                    seed: 0,
                    spec_hash: dynalign::encoders::cache_key(&spec, &d.features, d.d, 0),
                    kind: spec.kind(),
                };
                let path = out.join(format!("{name}.enc"));
                write_cache(&path, &header, &seqs)?;
                d.write_csv(&out.join(format!("{name}.csv")))?;
                println!("{} {:?}", path.display(), header.shape);
            }
            Ok(true)
        }
        Command::Lyapunov(a) => {
            let sys = SystemParams::from_name(&a.system, a.delta).map_err(|e| HarnessError::Config(e.to_string()))?;
            print_json(&exp::system_spectrum(&sys)?)?;
            Ok(true)
        }
        Command::Ais(a) => {
            let sys = SystemParams::from_name(&a.system, a.delta).map_err(|e| HarnessError::Config(e.to_string()))?;
            let init = cfg.encoding.init_map;
            let traj = dynalign::dynsys::integrate(&sys, init.apply(1.0), cfg.encoding.h, exp::AIS_STEPS)?;
            let a = ais(&traj, exp::AIS_BINS)?;
            let tau = ensemble_tau_corr(&sys, &exp::tau_features(), &init, exp::TAU_WINDOW, cfg.encoding.h)?;
            print_json(&serde_json::json!({
                "system": sys.to_string(),
                "ais_bits": a.mean,
                "ais_per_axis": a.per_axis,
                "tau_corr": tau.acf.tau_corr,
                "tau_corr_exceeds_window": tau.acf.exceeds_window,
                "horizon": tau.horizon,
            }))?;
            Ok(true)
        }
        Command::Train { delta } => {
            let ctx = context(&cli, cfg)?;
            let r = exp::run_train(&ctx, *delta)?;
            print_json(&r)?;
            Ok(true)
        }
        Command::Sweep => {
            if cfg.sweep.is_none() {
                cfg.sweep = Some(SweepSpec {
                    deltas: criteria::DELTA_GRID.to_vec(),
                    twin: true,
                    deletion: vec![0.4],
                    deletion_reps: 3,
                });
            }
            let ctx = context(&cli, cfg)?;
            let exps = exp::run_sweep(&ctx)?;
            if !cli.check {
                return Ok(true);
            }
            Ok(report(&[
                criteria::energy_transition(&exps, -1.5, 10.0),
                criteria::ais_valley(&exps, -1.5, 2.0, 10.0),
                criteria::tau_ordering(&exps, -1.5, 2.0, 10.0),
                criteria::robustness_dichotomy(&exps, -1.5, 10.0, 0.4),
            ]))
        }
        Command::Attractors => {
            if cfg.attractors.is_none() {
                cfg.attractors = Some(AttractorSpec {
                    systems: SystemParams::attractors()
                        .iter()
                        .map(|s| s.name().to_string())
                        .collect(),
                    t_max: vec![8.0],
                    n_steps: vec![1, 5],
                });
            }
            let ctx = context(&cli, cfg)?;
            exp::run_attractor_compare(&ctx)?;
            if !cli.check {
                return Ok(true);
            }
            Ok(report(&[criteria::divergence_identity()?]))
        }
        Command::Rl => {
            cfg.rl.get_or_insert_with(RlSpec::default);
            let ctx = context(&cli, cfg)?;
            let exps = exp::run_rl(&ctx)?;
            Ok(!cli.check || report(&[criteria::rl_signal(&exps)]))
        }
        Command::Binding => {
            cfg.binding.get_or_insert_with(BindingSpec::default);
            if !matches!(cfg.dataset, DatasetSpec::Binding { .. }) {
                if cli.config.is_some() {
                    return Err(HarnessError::Config("binding needs dataset.kind = \"binding\"".into()));
                }
                cfg.dataset = DatasetSpec::default_binding();
                cfg.train.patience = 15;
                cfg.train.batch = 64;
                cfg.train.max_epochs = 100;
            }
            let ctx = context(&cli, cfg)?;
            let exps = exp::run_binding(&ctx)?;
            Ok(!cli.check || report(&[criteria::binding_advantage(&exps)]))
        }
        Command::Theory => {
            let spec = cfg.theory.get_or_insert_with(TheorySpec::default).clone();
            let seed = cfg.seeds[0];
            let ctx = context(&cli, cfg)?;
            exp::run_theory_table(&ctx)?;
            if !cli.check {
                return Ok(true);
            }
            Ok(report(&[
                criteria::tau_m_identity()?,
                criteria::variance_limits(&spec.rate_points, spec.mc_duration.max(1.0), seed)?,
            ]))
        }
        Command::Report { checkpoint } => {
            if let Some(p) = checkpoint {
                let r = cfg.report.get_or_insert_with(|| dynalign_harness::config::ReportSpec {
                    checkpoint: p.clone(),
                    delta: None,
                    samples: 500,
                    seed: 0,
                });
                r.checkpoint = p.clone();
            }
            let ctx = context(&cli, cfg)?;
            let rep = exp::run_metrics_report(&ctx)?;
            println!("accuracy {:.4}", rep.accuracy);
            for (l, (p, ib)) in rep.probes.iter().zip(&rep.ib_plane).enumerate() {
                println!(
                    "layer {l}: rate {:.3} probe {:.3} I(T;X) {:.3} I(T;Y) {:.3}",
                    rep.activity.firing_rate[l], p.accuracy, ib.i_tx, ib.i_ty
                );
            }
            Ok(true)
        }
        Command::Fit { input, kind, lambda_c } => {
            let (x, y) = read_xy(input)?;
            match kind {
                FitKind::Powerlaw => print_json(&powerlaw_fit(&x, &y, *lambda_c)?)?,
                FitKind::Sigmoid => print_json(&sigmoid_fit(&x, &y)?)?,
                FitKind::Pearson => print_json(&pearson(&x, &y)?)?,
                FitKind::MannWhitney => print_json(&mann_whitney_u(&x, &y)?)?,
            }
            Ok(true)
        }
    }
}

fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| HarnessError::Config(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Config(format!("{}: missing column '{name}'", path.display())))
    };
    let (ix, iy) = (col("x")?, col("y")?);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Config(e.to_string()))?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| HarnessError::Config(format!("{} row {}: bad number", path.display(), i + 1)))
        };
        x.push(parse(ix)?);
        y.push(parse(iy)?);
    }
    Ok((x, y))
}
