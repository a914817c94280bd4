//! Declarative experiment configuration and the shipped presets.

use anyhow::{bail, ensure, Context, Result};
use qrc_core::dynamics::SystemSpec;
use qrc_core::quantum::{Encoding, NoiseModel};
use qrc_core::reservoir::Variant;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    Lorenz63,
    Lorenz96 { dim: usize, forcing: f64 },
}

impl SystemConfig {
    pub fn spec(&self) -> Result<SystemSpec> {
        Ok(match *self {
            SystemConfig::Lorenz63 => SystemSpec::lorenz63(),
            SystemConfig::Lorenz96 { dim, forcing } => SystemSpec::lorenz96(dim, forcing)?,
        })
    }
}

/// Ground-truth data generation and the washout / train / test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dt: f64,
    pub washout_lt: f64,
    pub train_lt: f64,
    /// Closed-loop window used for the forecast and the Lyapunov analysis.
    pub test_lt: f64,
    /// Integration steps discarded before sampling starts.
    pub transient_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirSettings {
    pub variant: Variant,
    pub n_qubits: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub encoding: Encoding,
    pub noise: NoiseModel,
    pub beta_grid: Vec<f64>,
    /// Trailing share of the training window held out to pick β.
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySettings {
    pub n_exponents: usize,
    /// Leading part of the closed-loop window excluded from averages.
    pub skip_lt: f64,
    /// Length of the ground-truth run for the reference spectrum.
    pub reference_lt: f64,
    pub cle_exponents: usize,
    /// Backward transient of the covariant-vector iteration.
    pub clv_backward_lt: f64,
}

/// Pipeline stages run for every seed after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stages {
    pub forecast: bool,
    pub lyapunov: bool,
    pub cle: bool,
    pub clv: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { forecast: true, lyapunov: true, cle: true, clv: true };
    pub const NONE: Stages = Stages { forecast: false, lyapunov: false, cle: false, clv: false };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    Shots,
    Depolarizing,
    AmplitudeDamping,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Shots => "shots",
            SweepAxis::Depolarizing => "depolarizing",
            SweepAxis::AmplitudeDamping => "amplitude_damping",
        }
    }
}

/// A grid of configurations: every `value` of `axis` crossed with every leak
/// rate in `epsilons` (the configured leak rate when empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

impl SweepConfig {
    /// `(axis value, ε)` pairs in output order.
    pub fn points(&self, default_eps: f64) -> Vec<(f64, f64)> {
        match self.axis {
            SweepAxis::Epsilon => self.values.iter().map(|&e| (e, e)).collect(),
            _ => {
                let eps = if self.epsilons.is_empty() { vec![default_eps] } else { self.epsilons.clone() };
                self.values.iter().flat_map(|&v| eps.iter().map(move |&e| (v, e))).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Prefix of every emitted file.
    pub name: String,
    pub system: SystemConfig,
    pub data: DataConfig,
    pub reservoir: ReservoirSettings,
    pub stability: StabilitySettings,
    pub stages: Stages,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    pub seeds: Vec<u64>,
    /// Long-running configurations only execute with `--extended`.
    #[serde(default)]
    pub extended: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.name.is_empty() && !self.name.contains(['/', '\\']), "name must be a plain file prefix");
        ensure!(!self.seeds.is_empty(), "invalid argument: seed list is empty");
        self.system.spec()?;
        let d = &self.data;
        ensure!(d.dt > 0.0, "dt must be positive");
        ensure!(d.washout_lt >= 0.0, "washout length must be non-negative");
        for (v, what) in [(d.train_lt, "training"), (d.test_lt, "test"), (self.stability.reference_lt, "reference")] {
            ensure!(v > 0.0 && v.is_finite(), "{what} length must be positive");
        }
        let s = &self.stability;
        ensure!(s.skip_lt >= 0.0 && s.skip_lt < d.test_lt, "skip must be shorter than the test window");
        ensure!(s.clv_backward_lt >= 0.0, "backward transient must be non-negative");
        let dim = self.system.spec()?.dim;
        ensure!((1..=dim).contains(&s.n_exponents), "n_exponents must lie in 1..={dim}");
        ensure!(s.cle_exponents >= 1, "at least one conditional exponent is needed");
        let r = &self.reservoir;
        ensure!(r.epsilon > 0.0 && r.epsilon <= 1.0, "leak rate must lie in (0, 1]");
        ensure!(!r.beta_grid.is_empty(), "beta grid is empty");
        r.noise.validate()?;
        if let Some(sw) = &self.sweep {
            ensure!(!sw.values.is_empty(), "sweep has no values");
            for &v in &sw.values {
                match sw.axis {
                    SweepAxis::Epsilon => ensure!(v > 0.0 && v <= 1.0, "leak rate {v} outside (0, 1]"),
                    SweepAxis::Shots => ensure!(v >= 1.0 && v.fract() == 0.0, "shot count {v} must be a positive integer"),
                    _ => ensure!((0.0..=1.0).contains(&v), "noise probability {v} outside [0, 1]"),
                }
            }
            for &e in &sw.epsilons {
                ensure!(e > 0.0 && e <= 1.0, "leak rate {e} outside (0, 1]");
            }
        }
        Ok(())
    }

    /// Copy with the sweep coordinate applied.
    pub fn at_point(&self, axis: SweepAxis, value: f64, epsilon: f64) -> Self {
        let mut cfg = self.clone();
        cfg.reservoir.epsilon = epsilon;
        cfg.reservoir.noise = match axis {
            SweepAxis::Epsilon => cfg.reservoir.noise,
            SweepAxis::Shots => NoiseModel::Sampling { shots: value as u64 },
            SweepAxis::Depolarizing => NoiseModel::Depolarizing { p: value },
            SweepAxis::AmplitudeDamping => NoiseModel::AmplitudeDamping { p: value },
        };
        cfg.sweep = None;
        cfg
    }
}

pub const NOISE_FREE_SEEDS: std::ops::Range<u64> = 0..10;
pub const SAMPLING_SEEDS: std::ops::Range<u64> = 0..5;
pub const CHANNEL_SEEDS: std::ops::Range<u64> = 0..3;

pub const LEAK_GRID: [f64; 13] = [0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0];
pub const SHOT_GRID: [f64; 5] = [1000.0, 5000.0, 10000.0, 25000.0, 50000.0];
pub const NOISE_GRID: [f64; 4] = [0.001, 0.01, 0.05, 0.1];
pub const NOISE_LEAK_GRID: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Lorenz-63 with the default 7-qubit recurrence-free reservoir.
pub fn lorenz63() -> ExperimentConfig {
    ExperimentConfig {
        name: "lorenz63".into(),
        system: SystemConfig::Lorenz63,
        data: DataConfig { dt: 0.01, washout_lt: 5.0, train_lt: 20.0, test_lt: 200.0, transient_steps: 10_000, seed: 0 },
        reservoir: ReservoirSettings {
            variant: Variant::RfQrc,
            n_qubits: 7,
            epsilon: 0.21,
            encoding: Encoding::Tiled,
            noise: NoiseModel::None,
            beta_grid: vec![1e-9, 1e-12],
            val_fraction: 0.2,
        },
        stability: StabilitySettings {
            n_exponents: 3,
            skip_lt: 5.0,
            reference_lt: 1000.0,
            cle_exponents: 1,
            clv_backward_lt: 10.0,
        },
        stages: Stages::ALL,
        sweep: None,
        seeds: NOISE_FREE_SEEDS.collect(),
        extended: false,
    }
}

/// Lorenz-96 with `dim` = 10 (9 qubits) or 20 (13 qubits, extended).
pub fn lorenz96(dim: usize) -> ExperimentConfig {
    let (n, eps) = if dim == 20 { (13, 0.12) } else { (9, 0.15) };
    ExperimentConfig {
        name: format!("lorenz96_{dim}"),
        system: SystemConfig::Lorenz96 { dim, forcing: 8.0 },
        data: DataConfig { dt: 0.01, washout_lt: 10.0, train_lt: 200.0, test_lt: 60.0, transient_steps: 10_000, seed: 0 },
        reservoir: ReservoirSettings { n_qubits: n, epsilon: eps, ..lorenz63().reservoir },
        stability: StabilitySettings {
            n_exponents: dim,
            skip_lt: 5.0,
            reference_lt: 1000.0,
            cle_exponents: 1,
            clv_backward_lt: 10.0,
        },
        stages: Stages { clv: false, ..Stages::ALL },
        sweep: None,
        seeds: NOISE_FREE_SEEDS.collect(),
        extended: dim == 20,
    }
}

fn leak_sweep(mut cfg: ExperimentConfig, name: &str, grid: &[f64], stages: Stages) -> ExperimentConfig {
    cfg.name = name.into();
    cfg.stages = stages;
    cfg.sweep = Some(SweepConfig { axis: SweepAxis::Epsilon, values: grid.to_vec(), epsilons: vec![] });
    cfg
}

fn noise_sweep(axis: SweepAxis, name: &str) -> ExperimentConfig {
    let mut cfg = lorenz63();
    cfg.name = name.into();
    cfg.stages = Stages { lyapunov: true, ..Stages::NONE };
    cfg.seeds = CHANNEL_SEEDS.collect();
    cfg.sweep = Some(SweepConfig { axis, values: NOISE_GRID.to_vec(), epsilons: NOISE_LEAK_GRID.to_vec() });
    cfg
}

/// Shot-noise sweep on the 8-qubit reservoir.
pub fn shots_sweep() -> ExperimentConfig {
    let mut cfg = lorenz63();
    cfg.name = "lorenz63_shots".into();
    cfg.reservoir.n_qubits = 8;
    cfg.stages = Stages { lyapunov: true, ..Stages::NONE };
    cfg.seeds = SAMPLING_SEEDS.collect();
    cfg.sweep = Some(SweepConfig { axis: SweepAxis::Shots, values: SHOT_GRID.to_vec(), epsilons: vec![0.1, 0.2, 0.3, 0.4] });
    cfg
}

pub fn amplitude_damping_sweep() -> ExperimentConfig {
    noise_sweep(SweepAxis::AmplitudeDamping, "lorenz63_amplitude_damping")
}

pub fn depolarizing_sweep() -> ExperimentConfig {
    noise_sweep(SweepAxis::Depolarizing, "lorenz63_depolarizing")
}

/// Default leak-rate sweep of the recurrence-free reservoir.
pub fn leak_rate_sweep() -> ExperimentConfig {
    let stages = Stages { clv: false, ..Stages::ALL };
    leak_sweep(lorenz63(), "lorenz63_leak", &LEAK_GRID, stages)
}

pub const PRESETS: [&str; 13] = [
    "table3", "table5", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "appc", "appd", "lorenz96-10", "lorenz96-20",
];

/// Named bundles of experiments.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let only = |stages: Stages| ExperimentConfig { stages, ..lorenz63() };
    Ok(match name {
        "table3" => vec![lorenz63()],
        "table5" => vec![lorenz63(), lorenz96(10), lorenz96(20)],
        "fig3" | "fig4" => vec![only(Stages { lyapunov: true, clv: true, ..Stages::NONE })],
        "fig5" => vec![leak_rate_sweep()],
        "fig6" => {
            let stages = Stages { cle: true, ..Stages::NONE };
            let mut qrc = lorenz63();
            qrc.reservoir.variant = Variant::Qrc;
            vec![
                leak_sweep(lorenz63(), "lorenz63_cle_rfqrc", &LEAK_GRID, stages),
                leak_sweep(qrc, "lorenz63_cle_qrc", &LEAK_GRID, stages),
            ]
        }
        "fig7" => vec![leak_sweep(lorenz63(), "lorenz63_vpt", &LEAK_GRID, Stages { forecast: true, cle: true, ..Stages::NONE })],
        "fig8" => vec![shots_sweep()],
        "fig9" => vec![amplitude_damping_sweep(), depolarizing_sweep()],
        "appc" => {
            let mut cfg = lorenz96(10);
            cfg.reservoir.n_qubits = 10;
            let grid = [0.001, 0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 1.0];
            vec![leak_sweep(cfg, "lorenz96_10_leak", &grid, Stages { clv: false, ..Stages::ALL })]
        }
        "appd" => {
            let mut cfg = lorenz63();
            cfg.reservoir.variant = Variant::Qrc;
            vec![leak_sweep(cfg, "lorenz63_qrc_leak", &LEAK_GRID, Stages { clv: false, ..Stages::ALL })]
        }
        "lorenz96-10" => vec![lorenz96(10)],
        "lorenz96-20" => vec![lorenz96(20)],
        _ => bail!("unknown preset {name:?}; available: {}", PRESETS.join(", ")),
    })
}
