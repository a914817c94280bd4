use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qrc_core::reservoir::Reservoir;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use qrc::config::{self, ExperimentConfig, Stages, SweepAxis, SweepConfig};
use qrc::experiment::{run_stages, train_seed, GroundTruth, SeedOutcome};
use qrc::formats::{spectrum_csv, write_atomic, write_json, write_trajectory, LayoutFile, ModelBundle};
use qrc::{emit_report, Report};

#[derive(Parser)]
#[command(name = "qrc", version, about = "Quantum reservoir forecasting and stability analysis of chaotic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); defaults to the Lorenz-63 setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed list overriding the configuration, e.g. `0,3,7` or `0..10`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Allow long-running configurations.
    #[arg(long, global = true)]
    extended: bool,
    /// Worker threads for independent seeds and sweep points.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Depolarizing,
    AmplitudeDamping,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the ground truth and write the trajectory and reference spectrum.
    GenData,
    /// Train one reservoir per seed and write model bundles and layouts.
    Train,
    /// Train, then forecast in closed loop and report the valid prediction time.
    Forecast {
        /// Forecast from a saved model bundle instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Closed-loop Lyapunov spectrum.
    Lyapunov {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Conditional Lyapunov exponents along the training drive.
    Cle {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Covariant Lyapunov vectors and their angle densities.
    Clv {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Leak-rate sweep.
    SweepLeak,
    /// Shot-count sweep.
    SweepShots,
    /// Channel-noise intensity sweep.
    SweepNoise {
        #[arg(long, value_enum, default_value = "amplitude-damping")]
        kind: NoiseKind,
    },
    /// Reproduce a named table or figure.
    Repro {
        /// One of: table3, table5, fig3 .. fig9, appc, appd, lorenz96-10, lorenz96-20.
        preset: String,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {text:?}");
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}"))).collect()
}

impl Common {
    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        cfg.validate()?;
        if cfg.extended && !self.extended {
            bail!("{} is long-running; pass --extended to run it", cfg.name);
        }
        Ok(cfg)
    }

    fn base_config(&self) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => config::lorenz63(),
        };
        self.apply(cfg)
    }
}

fn stages_only(cfg: &mut ExperimentConfig, stages: Stages) {
    cfg.stages = stages;
    cfg.sweep = None;
}

fn with_sweep(mut cfg: ExperimentConfig, axis: SweepAxis, default: ExperimentConfig) -> ExperimentConfig {
    if cfg.sweep.as_ref().is_none_or(|s| s.axis != axis) {
        let sw = default.sweep.expect("default sweep preset");
        cfg.sweep = Some(SweepConfig { axis, values: sw.values, epsilons: sw.epsilons });
        cfg.stages = default.stages;
    }
    cfg
}

fn report_and_exit(reports: &[Report], out: &Path) -> Result<ExitCode> {
    let files = emit_report(reports, out)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(if reports.iter().all(Report::all_ok) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// Runs `stages` from a saved model bundle.
fn from_bundle(cfg: &ExperimentConfig, path: &Path, stages: Stages, out: &Path) -> Result<ExitCode> {
    let bundle = ModelBundle::load(path)?;
    let truth = GroundTruth::build(cfg, stages.clv)?;
    let res = Reservoir::new(bundle.config.clone())?;
    let result = run_stages(cfg, &truth, &res, bundle, stages)?;
    let name = format!("{}_seed{}", cfg.name, result.seed);
    if let Some(pred) = &result.forecast {
        write_trajectory(&out.join(format!("{name}_forecast.csv")), pred, &truth.spec, result.seed)?;
    }
    if let Some(e) = &result.exponents {
        write_atomic(&out.join(format!("{name}_spectrum.csv")), &spectrum_csv(e)?)?;
    }
    write_json(&out.join(format!("{name}_result.json")), &SeedOutcome::Ok(result))?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    let workers = c.workers();
    let out = &c.out;
    let single = |stages: Stages, model: &Option<PathBuf>| -> Result<ExitCode> {
        let mut cfg = c.base_config()?;
        stages_only(&mut cfg, stages);
        if let Some(path) = model {
            return from_bundle(&cfg, path, stages, out);
        }
        let report = qrc::run_experiment(&cfg, workers)?;
        for r in report.seeds.iter().filter_map(SeedOutcome::ok) {
            if let Some(pred) = &r.forecast {
                let path = out.join(format!("{}_seed{}_forecast.csv", cfg.name, r.seed));
                write_trajectory(&path, pred, &cfg.system.spec()?, r.seed)?;
            }
        }
        report_and_exit(&[Report::Experiment(report)], out)
    };
    match &cli.command {
        Command::GenData => {
            let cfg = c.base_config()?;
            let truth = GroundTruth::build(&cfg, false)?;
            write_trajectory(&out.join(format!("{}_trajectory.csv", cfg.name)), &truth.traj, &truth.spec, cfg.data.seed)?;
            write_atomic(&out.join(format!("{}_target_spectrum.csv", cfg.name)), &spectrum_csv(&truth.reference.exponents)?)?;
            write_json(&out.join(format!("{}_reference.json", cfg.name)), &truth.reference)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train => {
            let cfg = c.base_config()?;
            let truth = GroundTruth::build(&cfg, false)?;
            let mut all_ok = true;
            for &seed in &cfg.seeds {
                match train_seed(&cfg, &truth, seed, None) {
                    Ok((_, bundle)) => {
                        let stem = format!("{}_seed{seed}", cfg.name);
                        write_json(&out.join(format!("{stem}_model.json")), &bundle)?;
                        write_json(&out.join(format!("{stem}_layout.json")), &LayoutFile::from(&bundle.config.layout))?;
                    }
                    Err(e) => {
                        all_ok = false;
                        log::error!("seed {seed}: {e:#}");
                    }
                }
            }
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Forecast { model } => single(Stages { forecast: true, ..Stages::NONE }, model),
        Command::Lyapunov { model } => single(Stages { lyapunov: true, ..Stages::NONE }, model),
        Command::Cle { model } => single(Stages { cle: true, ..Stages::NONE }, model),
        Command::Clv { model } => single(Stages { lyapunov: true, clv: true, ..Stages::NONE }, model),
        Command::SweepLeak | Command::SweepShots | Command::SweepNoise { .. } => {
            let (axis, default) = match cli.command {
                Command::SweepLeak => (SweepAxis::Epsilon, config::leak_rate_sweep()),
                Command::SweepShots => (SweepAxis::Shots, config::shots_sweep()),
                Command::SweepNoise { kind: NoiseKind::Depolarizing } => (SweepAxis::Depolarizing, config::depolarizing_sweep()),
                _ => (SweepAxis::AmplitudeDamping, config::amplitude_damping_sweep()),
            };
            let cfg = c.apply(with_sweep(c.base_config()?, axis, default))?;
            let report = qrc::run_sweep(&cfg, workers)?;
            report_and_exit(&[Report::Sweep(report)], out)
        }
        Command::Repro { preset } => {
            let mut reports = Vec::new();
            for cfg in config::preset(preset)? {
                if cfg.extended && !c.extended {
                    log::warn!("skipping {} (needs --extended)", cfg.name);
                    continue;
                }
                let cfg = c.apply(cfg)?;
                log::info!("running {}", cfg.name);
                reports.push(qrc::run(&cfg, workers)?);
            }
            report_and_exit(&reports, &out.join(preset))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
