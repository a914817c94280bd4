//! Leaky quantum reservoir, ridge readout and forecasting loops.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DatasetSplit, Scaler, TimeBase, Trajectory, DIVERGENCE_THRESHOLD};
use crate::error::{invalid, Error, Result};
use crate::linalg::{gram, solve_spd};
use crate::quantum::{
    encode_angles, expansion_terms, sample_shots, Backend, CircuitLayout, CircuitModel, NoiseModel, TrigExpansion,
    MAX_EXPANSION_TERMS,
};
use crate::rng::{stream_rng, Stream};

/// Range fed-back inputs are clamped to before encoding.
pub const FEEDBACK_CLAMP: (f64, f64) = (-0.05, 1.05);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Recurrence-free: the circuit sees only the input.
    RfQrc,
    /// Recurrent: the state is re-encoded through a fixed projection before the input.
    Qrc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub layout: CircuitLayout,
    /// Leak rate in `(0, 1]`.
    pub epsilon: f64,
    pub variant: Variant,
    /// Row-major `n x 2^n` projection with unit-norm rows (recurrent variant only).
    pub projection: Option<Vec<f64>>,
    pub beta_grid: Vec<f64>,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl ReservoirConfig {
    pub fn rf_qrc(layout: CircuitLayout, epsilon: f64, beta_grid: Vec<f64>, noise: NoiseModel, seed: u64) -> Result<Self> {
        let cfg = Self { layout, epsilon, variant: Variant::RfQrc, projection: None, beta_grid, noise, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Recurrent reservoir with a seeded Gaussian projection, rows normalised.
    pub fn qrc(layout: CircuitLayout, epsilon: f64, beta_grid: Vec<f64>, noise: NoiseModel, seed: u64) -> Result<Self> {
        let (n, nr) = (layout.n_qubits, layout.dim());
        let mut rng = stream_rng(seed, Stream::Projection);
        let mut proj: Vec<f64> = (0..n * nr).map(|_| StandardNormal.sample(&mut rng)).collect();
        for row in proj.chunks_exact_mut(nr) {
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let cfg = Self { layout, epsilon, variant: Variant::Qrc, projection: Some(proj), beta_grid, noise, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.noise.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(invalid("leak rate must lie in (0, 1]"));
        }
        if self.beta_grid.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(invalid("regularisation factors must be finite and non-negative"));
        }
        match (self.variant, &self.projection) {
            (Variant::RfQrc, None) => Ok(()),
            (Variant::RfQrc, Some(_)) => Err(invalid("the recurrence-free variant takes no projection")),
            (Variant::Qrc, None) => Err(invalid("the recurrent variant needs a projection")),
            (Variant::Qrc, Some(p)) => {
                if p.len() != self.layout.n_qubits * self.layout.dim() {
                    return Err(invalid("projection must be n x 2^n"));
                }
                Ok(())
            }
        }
    }

    pub fn n_states(&self) -> usize {
        self.layout.dim()
    }

    pub fn projection_matrix(&self) -> Option<DMatrix<f64>> {
        self.projection.as_ref().map(|p| DMatrix::from_row_slice(self.layout.n_qubits, self.layout.dim(), p))
    }
}

/// A configured reservoir ready to be driven.
///
/// `model` gives the deterministic output probabilities (noise-free, or
/// channel-averaged); finite sampling is applied on top in [`Reservoir::step`].
#[derive(Debug, Clone)]
pub struct Reservoir {
    config: ReservoirConfig,
    model: CircuitModel,
    projection: Option<DMatrix<f64>>,
    shots: Option<(u64, ChaCha8Rng)>,
}

impl Reservoir {
    /// Picks the cheapest exact backend. Recurrence-free circuits with few
    /// enough input slots are precompiled into a trigonometric expansion;
    /// otherwise the statevector (noise-free) or density matrix (channel) is run.
    pub fn new(config: ReservoirConfig) -> Result<Self> {
        config.validate()?;
        let channel = config.noise.channel();
        let layout = config.layout.clone();
        let axes = input_axes(&layout);
        let exact = match channel {
            None => CircuitModel::statevector(layout),
            Some(ch) => CircuitModel { layout, backend: Backend::Density(ch) },
        };
        let backend = if config.variant == Variant::RfQrc && expansion_terms(&axes) <= MAX_EXPANSION_TERMS {
            let n_angles = exact.layout.n_slots();
            Backend::Expanded(TrigExpansion::compile(n_angles, axes, |a| exact.probabilities(None, a))?)
        } else {
            exact.backend
        };
        Self::with_backend(config, backend)
    }

    pub fn with_backend(config: ReservoirConfig, backend: Backend) -> Result<Self> {
        config.validate()?;
        let projection = config.projection_matrix();
        let shots = match config.noise {
            NoiseModel::Sampling { shots } => Some((shots, stream_rng(config.seed, Stream::Shots))),
            _ => None,
        };
        let model = CircuitModel { layout: config.layout.clone(), backend };
        Ok(Self { config, model, projection, shots })
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    pub fn model(&self) -> &CircuitModel {
        &self.model
    }

    pub fn projection(&self) -> Option<&DMatrix<f64>> {
        self.projection.as_ref()
    }

    pub fn n_states(&self) -> usize {
        self.config.n_states()
    }

    fn check_state(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.n_states() {
            return Err(invalid(format!("state has {} entries, reservoir has {}", r.len(), self.n_states())));
        }
        Ok(())
    }

    /// Pre-activation `Proj·r` of the recurrence block.
    pub fn recurrence_preactivation(&self, r: &[f64]) -> Option<DVector<f64>> {
        self.projection.as_ref().map(|p| p * DVector::from_column_slice(r))
    }

    /// Recurrence angles `π·tanh(Proj·r)`.
    pub fn recurrence_angles(&self, r: &[f64]) -> Option<Vec<f64>> {
        self.recurrence_preactivation(r).map(|z| z.iter().map(|v| PI * libm::tanh(*v)).collect())
    }

    /// Deterministic circuit output for state `r` and scaled input.
    pub fn probabilities(&self, r: &[f64], u_scaled: &[f64]) -> Result<Vec<f64>> {
        self.check_state(r)?;
        let xi = encode_angles(u_scaled, &self.config.layout)?;
        let p = self.recurrence_angles(r);
        self.model.probabilities(p.as_deref(), &xi)
    }

    fn leak(&self, r: &[f64], p: &[f64]) -> Vec<f64> {
        let eps = self.config.epsilon;
        r.iter().zip(p).map(|(ri, pi)| (1.0 - eps) * ri + eps * pi).collect()
    }

    /// One reservoir update `r' = (1-ε) r + ε p`, including shot noise if configured.
    pub fn step(&mut self, r: &[f64], u_scaled: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.probabilities(r, u_scaled)?;
        if let Some((shots, rng)) = self.shots.as_mut() {
            p = sample_shots(&p, *shots, rng)?;
        }
        Ok(self.leak(r, &p))
    }

    /// Update without shot noise.
    pub fn step_deterministic(&self, r: &[f64], u_scaled: &[f64]) -> Result<Vec<f64>> {
        let p = self.probabilities(r, u_scaled)?;
        Ok(self.leak(r, &p))
    }

    /// Teacher-forced run: washout then training range of `traj`.
    ///
    /// Column `i` of `states` is the state after consuming `u(i)`; the matching
    /// target is the physical state `u(i+1)`.
    pub fn open_loop_run(&mut self, traj: &Trajectory, split: &DatasetSplit, r0: Option<&[f64]>) -> Result<OpenLoopRun> {
        if split.train.end >= traj.len() {
            return Err(invalid("the sample after the training range is needed as the last target"));
        }
        let nr = self.n_states();
        let mut r = match r0 {
            Some(r0) => {
                self.check_state(r0)?;
                r0.to_vec()
            }
            None => vec![0.0; nr],
        };
        for i in split.washout.clone() {
            r = self.step(&r, &split.scaler.scale(traj.state(i)))?;
        }
        let n_train = split.train.len();
        let mut states = DMatrix::zeros(nr, n_train);
        let mut targets = DMatrix::zeros(traj.dim, n_train);
        for (col, i) in split.train.clone().enumerate() {
            r = self.step(&r, &split.scaler.scale(traj.state(i)))?;
            states.column_mut(col).copy_from_slice(&r);
            targets.column_mut(col).copy_from_slice(traj.state(i + 1));
        }
        Ok(OpenLoopRun { states, targets, final_state: r })
    }

    /// Autonomous forecast: `û = W_outᵀ r` is scaled, clamped and fed back.
    ///
    /// Entry `k` of the result predicts the `k`-th sample after the state `r_init` was formed.
    pub fn closed_loop_run(
        &mut self,
        r_init: &[f64],
        readout: &ReadoutMatrix,
        scaler: &Scaler,
        n_steps: usize,
        time: TimeBase,
    ) -> Result<Trajectory> {
        self.check_state(r_init)?;
        readout.check(self.n_states(), scaler.dim())?;
        let mut r = r_init.to_vec();
        let mut out = Vec::with_capacity(n_steps * scaler.dim());
        for step in 0..n_steps {
            let u_hat = readout.predict(&r);
            if u_hat.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)) {
                return Err(Error::ForecastDiverged { step });
            }
            r = self.step(&r, &feedback_input(scaler, &u_hat))?;
            out.extend_from_slice(&u_hat);
        }
        Trajectory::new(out, scaler.dim(), time)
    }

    /// Distance ratios `‖Δr(t+1)‖ / ‖Δr(t)‖` of two copies under the same drive.
    ///
    /// Shot noise is left out so both copies see identical maps. The sequence
    /// stops once the distance underflows `1e-14`.
    pub fn esp_contraction_test(&self, drive: &[Vec<f64>], r1: &[f64], r2: &[f64]) -> Result<Vec<f64>> {
        self.check_state(r1)?;
        self.check_state(r2)?;
        let dist = |a: &[f64], b: &[f64]| libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        let (mut a, mut b) = (r1.to_vec(), r2.to_vec());
        let mut d = dist(&a, &b);
        if d == 0.0 {
            return Err(invalid("initial states must differ"));
        }
        let mut ratios = Vec::with_capacity(drive.len());
        for u in drive {
            a = self.step_deterministic(&a, u)?;
            b = self.step_deterministic(&b, u)?;
            let next = dist(&a, &b);
            ratios.push(next / d);
            if next < 1e-14 {
                break;
            }
            d = next;
        }
        Ok(ratios)
    }
}

fn input_axes(layout: &CircuitLayout) -> Vec<Vec<usize>> {
    (0..layout.input_dim).map(|j| layout.slots_of(j)).collect()
}

/// Scaled and clamped feedback input for a physical prediction.
pub fn feedback_input(scaler: &Scaler, u_hat: &[f64]) -> Vec<f64> {
    scaler.scale(u_hat).into_iter().map(|v| v.clamp(FEEDBACK_CLAMP.0, FEEDBACK_CLAMP.1)).collect()
}

/// Output of a teacher-forced run.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopRun {
    /// `N_r x N_train`.
    pub states: DMatrix<f64>,
    /// `D x N_train`, physical units.
    pub targets: DMatrix<f64>,
    pub final_state: Vec<f64>,
}

/// Linear readout `û = W_outᵀ r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutMatrix {
    /// `N_r x D`.
    pub w_out: DMatrix<f64>,
}

impl ReadoutMatrix {
    pub fn from_row_major(n_states: usize, dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n_states * dim || data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("readout data must hold n_states * dim finite values"));
        }
        Ok(Self { w_out: DMatrix::from_row_slice(n_states, dim, data) })
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.w_out.transpose().as_slice().to_vec()
    }

    pub fn predict(&self, r: &[f64]) -> Vec<f64> {
        (self.w_out.tr_mul(&DVector::from_column_slice(r))).as_slice().to_vec()
    }

    fn check(&self, n_states: usize, dim: usize) -> Result<()> {
        if self.w_out.shape() != (n_states, dim) {
            return Err(invalid("readout shape does not match the reservoir"));
        }
        Ok(())
    }
}

/// Ridge solution of `(R Rᵀ + βI) W = R Uᵀ`.
///
/// A failed factorisation is retried once with `1e-12·trace(R Rᵀ)/N_r` added to the diagonal.
pub fn train_readout(states: &DMatrix<f64>, targets: &DMatrix<f64>, beta: f64) -> Result<ReadoutMatrix> {
    if states.ncols() != targets.ncols() || states.ncols() == 0 {
        return Err(invalid("states and targets need the same, non-zero number of columns"));
    }
    if !(beta >= 0.0) {
        return Err(invalid("beta must be non-negative"));
    }
    let nr = states.nrows();
    let mut a = gram(states);
    let rhs = states * targets.transpose();
    let jitter = 1e-12 * a.trace() / nr as f64;
    for i in 0..nr {
        a[(i, i)] += beta;
    }
    let w = solve_spd(a.clone(), &rhs).or_else(|| {
        for i in 0..nr {
            a[(i, i)] += jitter;
        }
        solve_spd(a, &rhs)
    });
    w.map(|w_out| ReadoutMatrix { w_out }).ok_or(Error::SingularSystem)
}

/// `‖U − Wᵀ R‖² + β‖W‖²`.
pub fn ridge_loss(states: &DMatrix<f64>, targets: &DMatrix<f64>, readout: &ReadoutMatrix, beta: f64) -> f64 {
    let resid = targets - readout.w_out.tr_mul(states);
    resid.norm_squared() + beta * readout.w_out.norm_squared()
}

/// Picks the grid value with the lowest one-step error on the trailing
/// `val_fraction` of columns, training on the rest. Ties go to the smaller β.
pub fn select_beta(states: &DMatrix<f64>, targets: &DMatrix<f64>, grid: &[f64], val_fraction: f64) -> Result<f64> {
    if grid.is_empty() {
        return Err(invalid("beta grid is empty"));
    }
    if !(val_fraction > 0.0 && val_fraction <= 0.5) {
        return Err(invalid("validation fraction must lie in (0, 0.5]"));
    }
    let n = states.ncols();
    let n_val = ((n as f64 * val_fraction) as usize).max(1);
    if n_val >= n {
        return Err(invalid("too few columns to hold out a validation block"));
    }
    let n_fit = n - n_val;
    let (fit_r, fit_u) = (states.columns(0, n_fit).into_owned(), targets.columns(0, n_fit).into_owned());
    let (val_r, val_u) = (states.columns(n_fit, n_val), targets.columns(n_fit, n_val));
    let mut best: Option<(f64, f64)> = None;
    for &beta in grid {
        let err = match train_readout(&fit_r, &fit_u, beta) {
            Ok(w) => (val_u - w.w_out.tr_mul(&val_r)).norm_squared() / n_val as f64,
            Err(Error::SingularSystem) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let better = match best {
            None => true,
            Some((b, e)) => err < e || (err == e && beta < b),
        };
        if better {
            best = Some((beta, err));
        }
    }
    Ok(best.map(|(b, _)| b).unwrap_or(grid[0]))
}

/// Valid prediction time in Lyapunov times.
///
/// First step where `‖û − u‖ / sqrt(mean ‖u − ū‖²)` exceeds 0.4, or the whole
/// horizon if it never does.
pub fn vpt(prediction: &Trajectory, truth: &Trajectory) -> f64 {
    let n = prediction.len().min(truth.len());
    let mean = truth.mean();
    let norm = libm::sqrt(
        truth.rows().map(|u| u.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>()
            / truth.len().max(1) as f64,
    );
    let k = (0..n)
        .find(|&i| {
            let e = libm::sqrt(prediction.state(i).iter().zip(truth.state(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            !(e / norm <= 0.4)
        })
        .unwrap_or(n);
    truth.time.to_lt(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_trajectory, split_and_scale, SystemSpec};
    use approx::assert_relative_eq;

    fn rf(n: usize, d: usize, eps: f64) -> Reservoir {
        let layout = CircuitLayout::random(n, d, 4).unwrap();
        Reservoir::new(ReservoirConfig::rf_qrc(layout, eps, vec![1e-9], NoiseModel::None, 4).unwrap()).unwrap()
    }

    #[test]
    fn leak_extremes_and_mass() {
        let res = rf(3, 3, 1.0);
        let u = [0.2, 0.5, 0.9];
        let r0 = vec![0.1; 8];
        assert_eq!(res.step_deterministic(&r0, &u).unwrap(), res.probabilities(&r0, &u).unwrap());
        let res = rf(3, 3, 0.3);
        let r1 = res.step_deterministic(&r0, &u).unwrap();
        assert_relative_eq!(r1.iter().sum::<f64>(), 0.7 * 0.8 + 0.3, epsilon = 1e-14);
    }

    #[test]
    fn config_validation() {
        let layout = CircuitLayout::random(3, 3, 1).unwrap();
        assert!(ReservoirConfig::rf_qrc(layout.clone(), 0.0, vec![], NoiseModel::None, 1).is_err());
        assert!(ReservoirConfig::rf_qrc(layout.clone(), 1.5, vec![], NoiseModel::None, 1).is_err());
        let q = ReservoirConfig::qrc(layout, 0.3, vec![1e-9], NoiseModel::None, 1).unwrap();
        let p = q.projection_matrix().unwrap();
        for row in p.row_iter() {
            assert_relative_eq!(row.norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn first_open_loop_column() {
        let spec = SystemSpec::lorenz63();
        let traj = generate_trajectory(&spec, None, 0.01, 300, 100, 1).unwrap();
        let mut split = split_and_scale(&traj, 0.0, 1.0, 0.5).unwrap();
        split.washout = 0..0;
        let mut res = rf(3, 3, 0.21);
        let run = res.open_loop_run(&traj, &split, None).unwrap();
        let p = res.probabilities(&[0.0; 8], &split.scaler.scale(traj.state(split.train.start))).unwrap();
        for (a, b) in run.states.column(0).iter().zip(&p) {
            assert_relative_eq!(*a, 0.21 * b, epsilon = 1e-15);
        }
        assert_eq!(run.states.ncols(), split.train.len());
        assert_eq!(run.targets.column(0).as_slice(), traj.state(split.train.start + 1));
    }

    #[test]
    fn ridge_two_by_two() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let u = DMatrix::from_row_slice(1, 2, &[4.0, 5.0]);
        // β = 0 reduces to Wᵀ R = U, i.e. W = R⁻ᵀ Uᵀ.
        let w = train_readout(&r, &u, 0.0).unwrap();
        assert_relative_eq!(w.w_out[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(w.w_out[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_limit_and_singular_fallback() {
        let r = DMatrix::from_fn(4, 20, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let u = DMatrix::from_fn(2, 20, |i, j| (i + j) as f64);
        let big = 1e12 * gram(&r).norm();
        assert!(train_readout(&r, &u, big).unwrap().w_out.norm() < 1e-9);
        // Rank-deficient rows at β = 0 go through the jitter retry.
        let mut rd = r.clone();
        let row = rd.row(0).into_owned();
        rd.set_row(1, &row);
        assert!(train_readout(&rd, &u, 0.0).is_ok());
        assert_eq!(train_readout(&DMatrix::zeros(3, 5), &DMatrix::zeros(1, 5), 0.0), Err(Error::SingularSystem));
    }

    #[test]
    fn select_beta_ties_and_singletons() {
        let r = DMatrix::from_fn(3, 40, |i, j| ((i + 1) as f64 * 0.37 * j as f64).sin());
        let u = DMatrix::from_fn(1, 40, |_, j| r[(0, j)] - 2.0 * r[(2, j)]);
        assert_eq!(select_beta(&r, &u, &[1e-3], 0.25).unwrap(), 1e-3);
        assert_eq!(select_beta(&r, &u, &[1e-6, 1e-6], 0.25).unwrap(), 1e-6);
        assert_eq!(select_beta(&r, &u, &[1e2, 1e-10], 0.25).unwrap(), 1e-10);
        assert!(select_beta(&r, &u, &[], 0.25).is_err());
        assert!(select_beta(&r, &u, &[1.0], 0.6).is_err());
    }

    #[test]
    fn vpt_edges() {
        let spec = SystemSpec::lorenz63();
        let truth = generate_trajectory(&spec, None, 0.01, 500, 100, 2).unwrap();
        assert_eq!(vpt(&truth, &truth), truth.time.to_lt(500));
        let m = truth.mean();
        let flat = Trajectory::new(m.iter().cycle().take(1500).copied().collect(), 3, truth.time).unwrap();
        assert!(vpt(&flat, &truth) < 0.2);
    }

    #[test]
    fn esp_ratio_is_one_minus_eps() {
        let res = rf(3, 3, 0.3);
        let drive: Vec<Vec<f64>> = (0..30).map(|i| vec![0.03 * i as f64, 0.5, 0.9 - 0.02 * i as f64]).collect();
        let ratios = res.esp_contraction_test(&drive, &[0.0; 8], &[0.125; 8]).unwrap();
        assert_eq!(ratios.len(), 30);
        // ‖Δr(t)‖ = 0.7^t ‖Δr(0)‖ holds to rounding in absolute terms.
        let d0 = (8.0f64 * 0.125 * 0.125).sqrt();
        let mut d = d0;
        for (t, g) in ratios.iter().enumerate() {
            d *= g;
            assert!((d - 0.7f64.powi(t as i32 + 1) * d0).abs() < 1e-15);
        }
        let res = rf(3, 3, 1.0);
        assert_eq!(res.esp_contraction_test(&drive, &[0.0; 8], &[0.125; 8]).unwrap(), vec![0.0]);
    }
}
