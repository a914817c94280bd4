//! Per-seed pipeline (washout, training, closed loop, stability) and ensembles.

use anyhow::{anyhow, ensure, Context, Result};
use qrc_core::dynamics::{
    generate_trajectory, reference_lyapunov_with_history, split_and_scale, DatasetSplit, SystemSpec, TimeBase,
    Trajectory,
};
use qrc_core::quantum::{Backend, CircuitLayout};
use qrc_core::reservoir::{select_beta, train_readout, vpt, Reservoir, ReservoirConfig, Variant};
use qrc_core::stability::{
    angle_pdf, clv_backward, kaplan_yorke, lyapunov_spectrum, wasserstein1, AngleSeries, GsVerdict,
    LyapunovOptions,
};
use qrc_core::tangent::{ClosedLoopTangent, ConditionalTangent};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Stages};
use crate::formats::ModelBundle;

/// Ground-truth data shared by every seed of an experiment.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: SystemSpec,
    /// Washout, training and test samples plus one trailing target.
    pub traj: Trajectory,
    pub split: DatasetSplit,
    pub reference: Reference,
    /// Pairwise covariant-vector angles over a test-length window.
    pub target_angles: Option<AngleSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub exponents: Vec<f64>,
    pub ky_dimension: Option<f64>,
    pub lambda1: f64,
    pub lt_steps: usize,
}

impl Reference {
    /// Most negative exponent of the drive.
    pub fn lambda_star(&self) -> f64 {
        self.exponents.last().copied().unwrap_or(f64::NAN)
    }
}

impl GroundTruth {
    pub fn build(cfg: &ExperimentConfig, with_angles: bool) -> Result<Self> {
        let spec = cfg.system.spec()?;
        let d = &cfg.data;
        let time = match spec.default_lambda1() {
            Some(l1) => TimeBase::new(d.dt, l1)?,
            None => generate_trajectory(&spec, None, d.dt, 20_000, d.transient_steps, d.seed)?.time,
        };
        let n_data = time.steps(d.washout_lt) + time.steps(d.train_lt) + time.steps(d.test_lt).max(1) + 1;
        let mut traj = generate_trajectory(&spec, None, d.dt, n_data, d.transient_steps, d.seed)
            .context("generating the training trajectory")?;
        traj.time = time;
        let split = split_and_scale(&traj, d.washout_lt, d.train_lt, d.test_lt)?;

        let st = &cfg.stability;
        let ref_seed = d.seed.wrapping_add(1);
        let mut long = generate_trajectory(&spec, None, d.dt, time.steps(st.reference_lt), d.transient_steps, ref_seed)
            .context("generating the reference trajectory")?;
        long.time = time;
        let (les, _) = reference_lyapunov_with_history(&spec, &long, st.n_exponents, false)?;
        let reference = Reference {
            ky_dimension: les.ky_dimension,
            exponents: les.exponents,
            lambda1: time.lambda1,
            lt_steps: time.lt_steps,
        };
        let target_angles = if with_angles {
            let window = long.slice(0..time.steps(d.test_lt).min(long.len()));
            let (_, hist) = reference_lyapunov_with_history(&spec, &window, st.n_exponents, true)?;
            let hist = hist.ok_or_else(|| anyhow!("tangent history missing"))?;
            Some(clv_backward(&hist, time.steps(st.clv_backward_lt), 0)?.angles)
        } else {
            None
        };
        Ok(Self { spec, traj, split, reference, target_angles })
    }

    pub fn time(&self) -> TimeBase {
        self.traj.time
    }

    /// Scaled inputs over the washout and training ranges.
    pub fn drive(&self) -> Vec<Vec<f64>> {
        (0..self.split.train.end).map(|i| self.split.scaler.scale(self.traj.state(i))).collect()
    }
}

/// Everything measured for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub beta: f64,
    pub vpt_lt: Option<f64>,
    pub exponents: Option<Vec<f64>>,
    pub ky_dimension: Option<f64>,
    pub cle: Option<Vec<f64>>,
    pub gs: Option<GsVerdict>,
    /// One 1°-bin density per covariant-vector pair.
    pub angle_pdfs: Option<Vec<Vec<f64>>>,
    pub min_angles_deg: Option<Vec<f64>>,
    #[serde(skip)]
    pub angles: Option<AngleSeries>,
    #[serde(skip)]
    pub bundle: Option<ModelBundle>,
    #[serde(skip)]
    pub forecast: Option<Trajectory>,
}

impl SeedResult {
    pub fn max_cle(&self) -> Option<f64> {
        self.cle.as_ref().and_then(|c| c.first().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SeedOutcome {
    Ok(SeedResult),
    Failed { seed: u64, error: String },
}

impl SeedOutcome {
    pub fn seed(&self) -> u64 {
        match self {
            SeedOutcome::Ok(r) => r.seed,
            SeedOutcome::Failed { seed, .. } => *seed,
        }
    }

    pub fn ok(&self) -> Option<&SeedResult> {
        match self {
            SeedOutcome::Ok(r) => Some(r),
            SeedOutcome::Failed { .. } => None,
        }
    }
}

pub fn reservoir_config(cfg: &ExperimentConfig, dim: usize, seed: u64) -> Result<ReservoirConfig> {
    let r = &cfg.reservoir;
    let layout = CircuitLayout::random(r.n_qubits, dim, seed)?.with_encoding(r.encoding);
    let grid = r.beta_grid.clone();
    Ok(match r.variant {
        Variant::RfQrc => ReservoirConfig::rf_qrc(layout, r.epsilon, grid, r.noise, seed)?,
        Variant::Qrc => ReservoirConfig::qrc(layout, r.epsilon, grid, r.noise, seed)?,
    })
}

/// Builds and trains the reservoir of one seed. `backend` reuses a
/// precompiled circuit model built for the same layout and noise.
pub fn train_seed(
    cfg: &ExperimentConfig,
    truth: &GroundTruth,
    seed: u64,
    backend: Option<&Backend>,
) -> Result<(Reservoir, ModelBundle)> {
    let rc = reservoir_config(cfg, truth.spec.dim, seed)?;
    let res = match backend {
        Some(b) => Reservoir::with_backend(rc, b.clone())?,
        None => Reservoir::new(rc)?,
    };
    // Every stage works on a fresh copy, so shot streams restart per stage.
    let run = res.clone().open_loop_run(&truth.traj, &truth.split, None).context("open-loop run")?;
    let grid = &cfg.reservoir.beta_grid;
    let beta = if grid.len() == 1 {
        grid[0]
    } else {
        select_beta(&run.states, &run.targets, grid, cfg.reservoir.val_fraction)?
    };
    let readout = train_readout(&run.states, &run.targets, beta).context("ridge regression")?;
    let bundle = ModelBundle::new(res.config().clone(), truth.split.scaler.clone(), &readout, beta, run.final_state);
    Ok((res, bundle))
}

/// Runs the configured stages for one seed.
pub fn run_seed(cfg: &ExperimentConfig, truth: &GroundTruth, seed: u64, backend: Option<&Backend>) -> Result<SeedResult> {
    let (res, bundle) = train_seed(cfg, truth, seed, backend)?;
    run_stages(cfg, truth, &res, bundle, cfg.stages)
}

pub fn run_stages(
    cfg: &ExperimentConfig,
    truth: &GroundTruth,
    res: &Reservoir,
    bundle: ModelBundle,
    stages: Stages,
) -> Result<SeedResult> {
    let time = truth.time();
    let readout = bundle.readout()?;
    let scaler = &bundle.scaler;
    let st = &cfg.stability;
    let n_test = truth.split.test.len();
    let mut out = SeedResult {
        seed: bundle.config.seed,
        beta: bundle.beta,
        vpt_lt: None,
        exponents: None,
        ky_dimension: None,
        cle: None,
        gs: None,
        angle_pdfs: None,
        min_angles_deg: None,
        angles: None,
        bundle: None,
        forecast: None,
    };

    if stages.forecast {
        let pred = res.clone().closed_loop_run(&bundle.final_state, &readout, scaler, n_test, time).context("forecast")?;
        out.vpt_lt = Some(vpt(&pred, &truth.traj.slice(truth.split.test.clone())));
        out.forecast = Some(pred);
    }

    if stages.lyapunov || stages.clv {
        let mut r = res.clone();
        let mut tangent = ClosedLoopTangent::new(&mut r, &readout, scaler, bundle.final_state.clone());
        let opts = LyapunovOptions {
            n_exponents: st.n_exponents,
            n_steps: n_test,
            n_skip: time.steps(st.skip_lt),
            dt: time.dt,
            seed: bundle.config.seed,
            keep_history: stages.clv,
        };
        let (les, hist) = lyapunov_spectrum(&mut tangent, &opts).context("closed-loop Lyapunov spectrum")?;
        out.ky_dimension = kaplan_yorke(&les.exponents).ok();
        out.exponents = Some(les.exponents);
        if let Some(hist) = hist {
            let clv = clv_backward(&hist, time.steps(st.clv_backward_lt), bundle.config.seed).context("covariant vectors")?;
            drop(hist);
            let physical = clv.project(&readout.w_out.transpose())?;
            let angles = physical.angles;
            out.angle_pdfs = Some(angles.degrees.iter().map(|s| angle_pdf(s)).collect());
            out.min_angles_deg = Some(angles.degrees.iter().map(|s| s.iter().copied().fold(f64::INFINITY, f64::min)).collect());
            out.angles = Some(angles);
        }
    }

    if stages.cle {
        let drive = truth.drive();
        let mut r = res.clone();
        let mut tangent = ConditionalTangent::new(&mut r, &drive, vec![0.0; res.n_states()]);
        let opts = LyapunovOptions {
            n_exponents: st.cle_exponents.min(res.n_states()),
            n_steps: drive.len(),
            n_skip: truth.split.washout.len().min(drive.len() - 1),
            dt: time.dt,
            seed: bundle.config.seed,
            keep_history: false,
        };
        let (cle, _) = lyapunov_spectrum(&mut tangent, &opts).context("conditional exponents")?;
        out.gs = qrc_core::stability::classify_gs(cle.exponents[0], truth.reference.lambda_star()).ok();
        out.cle = Some(cle.exponents);
    }
    out.bundle = Some(bundle);
    Ok(out)
}

fn isolate(seed: u64, r: Result<SeedResult>) -> SeedOutcome {
    match r {
        Ok(r) => SeedOutcome::Ok(r),
        Err(e) => {
            log::warn!("seed {seed} failed: {e:#}");
            SeedOutcome::Failed { seed, error: format!("{e:#}") }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    /// Arithmetic mean and population standard deviation; `None` when empty.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        Some(Stat { mean, std, n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_ok: usize,
    pub n_failed: usize,
    pub exponents: Option<Vec<Stat>>,
    pub ky_dimension: Option<Stat>,
    pub max_cle: Option<Stat>,
    pub vpt_lt: Option<Stat>,
    pub angle_pdfs: Option<Vec<Vec<f64>>>,
    pub min_angles_deg: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn of(seeds: &[SeedOutcome]) -> Self {
        let ok: Vec<&SeedResult> = seeds.iter().filter_map(SeedOutcome::ok).collect();
        let with_les: Vec<&Vec<f64>> = ok.iter().filter_map(|r| r.exponents.as_ref()).collect();
        let exponents = with_les.first().map(|first| {
            (0..first.len()).map(|i| Stat::of(with_les.iter().map(|e| e[i])).unwrap()).collect()
        });
        let pdfs: Vec<&Vec<Vec<f64>>> = ok.iter().filter_map(|r| r.angle_pdfs.as_ref()).collect();
        let angle_pdfs = pdfs.first().map(|first| {
            let n = pdfs.len() as f64;
            (0..first.len())
                .map(|p| (0..first[p].len()).map(|b| pdfs.iter().map(|s| s[p][b]).sum::<f64>() / n).collect())
                .collect()
        });
        let mins: Vec<&Vec<f64>> = ok.iter().filter_map(|r| r.min_angles_deg.as_ref()).collect();
        let min_angles_deg = mins
            .first()
            .map(|first| (0..first.len()).map(|p| mins.iter().map(|m| m[p]).fold(f64::INFINITY, f64::min)).collect());
        Self {
            n_ok: ok.len(),
            n_failed: seeds.len() - ok.len(),
            exponents,
            ky_dimension: Stat::of(ok.iter().filter_map(|r| r.ky_dimension)),
            max_cle: Stat::of(ok.iter().filter_map(|r| r.max_cle())),
            vpt_lt: Stat::of(ok.iter().filter_map(|r| r.vpt_lt)),
            angle_pdfs,
            min_angles_deg,
        }
    }

    pub fn exponent_means(&self) -> Option<Vec<f64>> {
        self.exponents.as_ref().map(|e| e.iter().map(|s| s.mean).collect())
    }

    /// `|mean inferred − target|` per exponent.
    pub fn abs_errors(&self, target: &[f64]) -> Option<Vec<f64>> {
        self.exponent_means().map(|m| m.iter().zip(target).map(|(a, b)| (a - b).abs()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub reference: Reference,
    pub target_angle_pdfs: Option<Vec<Vec<f64>>>,
    pub seeds: Vec<SeedOutcome>,
    pub ensemble: Ensemble,
    /// Wasserstein-1 distance in degrees between ensemble and target PDFs, per pair.
    pub angle_wasserstein_deg: Option<Vec<f64>>,
    #[serde(skip)]
    pub target_angles: Option<AngleSeries>,
}

impl ExperimentReport {
    pub fn all_ok(&self) -> bool {
        self.ensemble.n_failed == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub epsilon: f64,
    pub seeds: Vec<SeedOutcome>,
    pub ensemble: Ensemble,
    pub abs_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub reference: Reference,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn all_ok(&self) -> bool {
        self.points.iter().all(|p| p.ensemble.n_failed == 0)
    }

    pub fn point(&self, value: f64, epsilon: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value && p.epsilon == epsilon)
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| anyhow!("thread pool: {e}"))
}

pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    ensure!(cfg.sweep.is_none(), "configuration describes a sweep; use run_sweep");
    let truth = GroundTruth::build(cfg, cfg.stages.clv)?;
    run_experiment_with(cfg, &truth, workers)
}

/// Like [`run_experiment`] with precomputed ground truth.
pub fn run_experiment_with(cfg: &ExperimentConfig, truth: &GroundTruth, workers: usize) -> Result<ExperimentReport> {
    use rayon::prelude::*;
    let seeds: Vec<SeedOutcome> = pool(workers)?.install(|| {
        cfg.seeds.par_iter().map(|&s| isolate(s, run_seed(cfg, truth, s, None))).collect()
    });
    let ensemble = Ensemble::of(&seeds);
    ensure!(ensemble.n_ok > 0, "all {} seeds failed", seeds.len());
    let target_angle_pdfs: Option<Vec<Vec<f64>>> =
        truth.target_angles.as_ref().map(|a| a.degrees.iter().map(|s| angle_pdf(s)).collect());
    let angle_wasserstein_deg = match (&ensemble.angle_pdfs, &target_angle_pdfs) {
        (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| wasserstein1(x, y)).collect()),
        _ => None,
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        reference: truth.reference.clone(),
        target_angle_pdfs,
        seeds,
        ensemble,
        angle_wasserstein_deg,
        target_angles: truth.target_angles.clone(),
    })
}

pub fn run_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let truth = GroundTruth::build(cfg, false)?;
    run_sweep_with(cfg, &truth, workers)
}

/// Sweep with precomputed ground truth. Jobs are `(axis value, seed)`
/// groups so a compiled circuit model is shared across leak rates.
pub fn run_sweep_with(cfg: &ExperimentConfig, truth: &GroundTruth, workers: usize) -> Result<SweepReport> {
    use rayon::prelude::*;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| anyhow!("configuration has no sweep section"))?;
    let points = sweep.points(cfg.reservoir.epsilon);
    let mut values: Vec<f64> = Vec::new();
    for &(v, _) in &points {
        if !values.contains(&v) {
            values.push(v);
        }
    }
    let jobs: Vec<(f64, u64)> = values.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<Vec<(f64, SeedOutcome)>> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(value, seed)| {
                let mut backend: Option<Backend> = None;
                points
                    .iter()
                    .filter(|(v, _)| *v == value)
                    .map(|&(_, eps)| {
                        let point_cfg = cfg.at_point(sweep.axis, value, eps);
                        let r = (|| {
                            if backend.is_none() {
                                let rc = reservoir_config(&point_cfg, truth.spec.dim, seed)?;
                                backend = Some(Reservoir::new(rc)?.model().backend.clone());
                            }
                            run_seed(&point_cfg, truth, seed, backend.as_ref())
                        })();
                        (eps, isolate(seed, r))
                    })
                    .collect()
            })
            .collect()
    });
    let mut out = Vec::with_capacity(points.len());
    for &(value, eps) in &points {
        let seeds: Vec<SeedOutcome> = jobs
            .iter()
            .zip(&results)
            .filter(|((v, _), _)| *v == value)
            .filter_map(|(_, rs)| rs.iter().find(|(e, _)| *e == eps).map(|(_, o)| o.clone()))
            .collect();
        let ensemble = Ensemble::of(&seeds);
        let abs_errors = ensemble.abs_errors(&truth.reference.exponents);
        out.push(SweepPoint { value, epsilon: eps, seeds, ensemble, abs_errors });
    }
    ensure!(out.iter().any(|p| p.ensemble.n_ok > 0), "every sweep point failed");
    Ok(SweepReport { config: cfg.clone(), reference: truth.reference.clone(), points: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config;

    fn result(seed: u64, exponents: Vec<f64>, ky: f64) -> SeedOutcome {
        SeedOutcome::Ok(SeedResult {
            seed,
            beta: 1e-9,
            vpt_lt: Some(seed as f64),
            exponents: Some(exponents),
            ky_dimension: Some(ky),
            cle: None,
            gs: None,
            angle_pdfs: Some(vec![vec![seed as f64, 1.0]]),
            min_angles_deg: Some(vec![10.0 + seed as f64]),
            angles: None,
            bundle: None,
            forecast: None,
        })
    }

    #[test]
    fn stat_uses_population_std() {
        let s = Stat::of([1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
        assert!(Stat::of([]).is_none());
    }

    #[test]
    fn ensemble_skips_failed_seeds() {
        let seeds = vec![
            result(0, vec![1.0, 0.0, -14.0], 2.0),
            SeedOutcome::Failed { seed: 1, error: "diverged".into() },
            result(2, vec![0.8, 0.2, -15.0], 2.1),
        ];
        let e = Ensemble::of(&seeds);
        assert_eq!((e.n_ok, e.n_failed), (2, 1));
        let means = e.exponent_means().unwrap();
        assert!((means[0] - 0.9).abs() < 1e-15 && (means[2] + 14.5).abs() < 1e-15);
        let errs = e.abs_errors(&[1.0, 0.0, -14.0]).unwrap();
        assert!((errs[0] - 0.1).abs() < 1e-15 && (errs[1] - 0.1).abs() < 1e-15);
        assert_eq!(e.angle_pdfs.unwrap(), vec![vec![1.0, 1.0]]);
        assert_eq!(e.min_angles_deg.unwrap(), vec![10.0]);
        assert!((e.ky_dimension.unwrap().mean - 2.05).abs() < 1e-15);
    }

    #[test]
    fn small_experiment_runs_and_is_deterministic() {
        let mut cfg = config::lorenz63();
        cfg.reservoir.n_qubits = 4;
        cfg.data.train_lt = 10.0;
        cfg.data.test_lt = 5.0;
        cfg.stability.skip_lt = 1.0;
        cfg.stability.reference_lt = 60.0;
        cfg.stages = Stages { forecast: true, lyapunov: true, cle: true, clv: false };
        cfg.seeds = vec![0, 1];
        let a = run_experiment(&cfg, 2).unwrap();
        let b = run_experiment(&cfg, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.all_ok());
        let r = a.seeds[0].ok().unwrap();
        assert_eq!(r.exponents.as_ref().unwrap().len(), 3);
        // Recurrence-free conditional exponents sit at the leak rate.
        let leak = (1.0 - cfg.reservoir.epsilon).ln() / cfg.data.dt;
        assert!((r.max_cle().unwrap() - leak).abs() < 1e-9);
    }
}
