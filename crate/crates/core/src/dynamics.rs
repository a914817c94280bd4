//! Ground-truth chaotic systems: Lorenz-63 and Lorenz-96.
//!
//! Trajectories are produced with fixed-step classical Runge-Kutta. The same
//! integrator is linearised exactly ([`rk4_step_with_tangent`]) so reference
//! Lyapunov spectra are those of the discrete map that generated the data.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::stability::{lyapunov_spectrum, LyapunovOptions, LyapunovResult, TangentHistory, TangentSystem};

/// States beyond this magnitude are treated as a blow-up.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemKind {
    Lorenz63,
    Lorenz96,
}

/// A Lorenz system with its parameters.
///
/// Lorenz-63 carries `[sigma, rho, beta]`; Lorenz-96 carries `[forcing]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub params: Vec<f64>,
    pub dim: usize,
}

impl SystemSpec {
    pub fn lorenz63() -> Self {
        Self { kind: SystemKind::Lorenz63, params: vec![10.0, 28.0, 8.0 / 3.0], dim: 3 }
    }

    pub fn lorenz96(dim: usize, forcing: f64) -> Result<Self> {
        let spec = Self { kind: SystemKind::Lorenz96, params: vec![forcing], dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("system parameters must be finite"));
        }
        match self.kind {
            SystemKind::Lorenz63 if self.dim != 3 || self.params.len() != 3 => {
                Err(invalid("Lorenz-63 needs dim 3 and parameters [sigma, rho, beta]"))
            }
            SystemKind::Lorenz96 if self.dim < 4 || self.params.len() != 1 => {
                Err(invalid("Lorenz-96 needs dim >= 4 and parameters [forcing]"))
            }
            _ => Ok(()),
        }
    }

    /// Leading exponent used for Lyapunov-time units, when tabulated.
    pub fn default_lambda1(&self) -> Option<f64> {
        match (self.kind, self.dim) {
            (SystemKind::Lorenz63, _) => Some(0.9056),
            (SystemKind::Lorenz96, 10) => Some(1.2),
            (SystemKind::Lorenz96, 20) => Some(1.5),
            _ => None,
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!("state has length {}, system dimension is {}", x.len(), self.dim)));
        }
        Ok(())
    }

    fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::Lorenz63 => {
                let (s, r, b) = (self.params[0], self.params[1], self.params[2]);
                out[0] = s * (x[1] - x[0]);
                out[1] = x[0] * (r - x[2]) - x[1];
                out[2] = x[0] * x[1] - b * x[2];
            }
            SystemKind::Lorenz96 => {
                let f = self.params[0];
                let m = self.dim;
                for i in 0..m {
                    let ip1 = (i + 1) % m;
                    let im1 = (i + m - 1) % m;
                    let im2 = (i + m - 2) % m;
                    out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + f;
                }
            }
        }
    }

    fn jacobian_into(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        match self.kind {
            SystemKind::Lorenz63 => {
                let (s, r, b) = (self.params[0], self.params[1], self.params[2]);
                jac[(0, 0)] = -s;
                jac[(0, 1)] = s;
                jac[(1, 0)] = r - x[2];
                jac[(1, 1)] = -1.0;
                jac[(1, 2)] = -x[0];
                jac[(2, 0)] = x[1];
                jac[(2, 1)] = x[0];
                jac[(2, 2)] = -b;
            }
            SystemKind::Lorenz96 => {
                let m = self.dim;
                for i in 0..m {
                    let ip1 = (i + 1) % m;
                    let im1 = (i + m - 1) % m;
                    let im2 = (i + m - 2) % m;
                    jac[(i, ip1)] = x[im1];
                    jac[(i, im2)] = -x[im1];
                    jac[(i, im1)] = x[ip1] - x[im2];
                    jac[(i, i)] = -1.0;
                }
            }
        }
    }
}

/// Right-hand side `f(x)` of the ODE.
pub fn rhs(spec: &SystemSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_len(x)?;
    let mut out = vec![0.0; spec.dim];
    spec.rhs_into(x, &mut out);
    Ok(out)
}

/// Analytic Jacobian `df_i/dx_j`.
pub fn system_jacobian(spec: &SystemSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    spec.check_len(x)?;
    let mut jac = DMatrix::zeros(spec.dim, spec.dim);
    spec.jacobian_into(x, &mut jac);
    Ok(jac)
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(spec: &SystemSpec, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    spec.check_len(x)?;
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let d = spec.dim;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    spec.rhs_into(x, &mut k1);
    spec.rhs_into(&axpy(x, 0.5 * dt, &k1), &mut k2);
    spec.rhs_into(&axpy(x, 0.5 * dt, &k2), &mut k3);
    spec.rhs_into(&axpy(x, dt, &k3), &mut k4);
    let next: Vec<f64> = (0..d)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow);
    }
    Ok(next)
}

/// RK4 step together with its exact linearisation applied to the columns of `w`.
pub fn rk4_step_with_tangent(
    spec: &SystemSpec,
    x: &[f64],
    dt: f64,
    w: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    spec.check_len(x)?;
    if w.nrows() != spec.dim {
        return Err(invalid("tangent basis has wrong row count"));
    }
    let d = spec.dim;
    let mut jac = DMatrix::zeros(d, d);
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];

    spec.rhs_into(x, &mut k[0]);
    spec.jacobian_into(x, &mut jac);
    let t1 = &jac * w;

    let x2 = axpy(x, 0.5 * dt, &k[0]);
    spec.rhs_into(&x2, &mut k[1]);
    spec.jacobian_into(&x2, &mut jac);
    let t2 = &jac * (w + &t1 * (0.5 * dt));

    let x3 = axpy(x, 0.5 * dt, &k[1]);
    spec.rhs_into(&x3, &mut k[2]);
    spec.jacobian_into(&x3, &mut jac);
    let t3 = &jac * (w + &t2 * (0.5 * dt));

    let x4 = axpy(x, dt, &k[2]);
    spec.rhs_into(&x4, &mut k[3]);
    spec.jacobian_into(&x4, &mut jac);
    let t4 = &jac * (w + &t3 * dt);

    let next: Vec<f64> =
        (0..d).map(|i| x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i])).collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow);
    }
    let w_next = w + (t1 + t2 * 2.0 + t3 * 2.0 + t4) * (dt / 6.0);
    Ok((next, w_next))
}

/// Time step and Lyapunov-time bookkeeping of a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBase {
    pub dt: f64,
    pub lambda1: f64,
    pub lt_steps: usize,
}

impl TimeBase {
    /// Steps per Lyapunov time are truncated, which reproduces the tabulated
    /// 110 / 83 / 66 steps for the three reference systems.
    pub fn new(dt: f64, lambda1: f64) -> Result<Self> {
        if !(dt > 0.0) || !(lambda1 > 0.0) || !lambda1.is_finite() {
            return Err(invalid("dt and lambda1 must be positive"));
        }
        let lt_steps = ((1.0 / (lambda1 * dt)) as usize).max(1);
        Ok(Self { dt, lambda1, lt_steps })
    }

    pub fn steps(&self, lyapunov_times: f64) -> usize {
        libm::round(lyapunov_times * self.lt_steps as f64) as usize
    }

    /// Converts a step count to Lyapunov times.
    pub fn to_lt(&self, steps: usize) -> f64 {
        steps as f64 * self.dt * self.lambda1
    }
}

/// Row-major `len x dim` sequence of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub dim: usize,
    pub time: TimeBase,
}

impl Trajectory {
    pub fn new(states: Vec<f64>, dim: usize, time: TimeBase) -> Result<Self> {
        if dim == 0 || states.len() % dim != 0 {
            return Err(invalid("state buffer is not a whole number of rows"));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(invalid("trajectory contains non-finite entries"));
        }
        Ok(Self { states, dim, time })
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Contiguous sub-trajectory.
    pub fn slice(&self, range: Range<usize>) -> Trajectory {
        Trajectory {
            states: self.states[range.start * self.dim..range.end * self.dim].to_vec(),
            dim: self.dim,
            time: self.time,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (mi, v) in m.iter_mut().zip(row) {
                *mi += v;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut var = vec![0.0; self.dim];
        for row in self.rows() {
            for ((vi, x), mi) in var.iter_mut().zip(row).zip(&m) {
                *vi += (x - mi) * (x - mi);
            }
        }
        let n = self.len().max(1) as f64;
        var.iter_mut().for_each(|v| *v /= n);
        var
    }
}

/// Integrates `n_discard + n_steps` RK4 steps and keeps the last `n_steps` states.
///
/// Without `x0` the start is a seeded standard-normal vector. If the system
/// has no tabulated leading exponent it is estimated from the run itself.
pub fn generate_trajectory(
    spec: &SystemSpec,
    x0: Option<&[f64]>,
    dt: f64,
    n_steps: usize,
    n_discard: usize,
    seed: u64,
) -> Result<Trajectory> {
    spec.validate()?;
    if n_steps == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let mut x: Vec<f64> = match x0 {
        Some(x0) => {
            spec.check_len(x0)?;
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(invalid("initial condition must be finite"));
            }
            x0.to_vec()
        }
        None => {
            let mut rng = stream_rng(seed, Stream::InitialCondition);
            (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    let mut states = Vec::with_capacity(n_steps * spec.dim);
    for step in 0..n_discard + n_steps {
        if step >= n_discard {
            states.extend_from_slice(&x);
        }
        x = rk4_step(spec, &x, dt).map_err(|_| Error::IntegrationDiverged { step })?;
        if x.iter().any(|v| v.abs() > DIVERGENCE_THRESHOLD) {
            return Err(Error::IntegrationDiverged { step });
        }
    }
    let provisional = spec.default_lambda1().unwrap_or(1.0);
    let mut traj = Trajectory { states, dim: spec.dim, time: TimeBase::new(dt, provisional)? };
    if spec.default_lambda1().is_none() {
        let les = reference_lyapunov(spec, &traj, 1)?;
        traj.time = TimeBase::new(dt, les.exponents[0])?;
    }
    Ok(traj)
}

/// Tangent dynamics of the RK4 map replayed along a stored trajectory.
pub struct GroundTruthTangent<'a> {
    spec: &'a SystemSpec,
    traj: &'a Trajectory,
    cursor: usize,
}

impl<'a> GroundTruthTangent<'a> {
    pub fn new(spec: &'a SystemSpec, traj: &'a Trajectory) -> Self {
        Self { spec, traj, cursor: 0 }
    }

    /// Index of the state the next Jacobian is evaluated at.
    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

impl TangentSystem for GroundTruthTangent<'_> {
    fn state_dim(&self) -> usize {
        self.spec.dim
    }

    fn advance(&mut self, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.cursor >= self.traj.len() {
            return Err(invalid("tangent propagation ran past the end of the trajectory"));
        }
        let x = self.traj.state(self.cursor);
        let (_, w) = rk4_step_with_tangent(self.spec, x, self.traj.time.dt, basis)?;
        self.cursor += 1;
        Ok(w)
    }
}

/// Transient skipped before averaging reference spectra, in Lyapunov times.
pub const REFERENCE_SKIP_LT: f64 = 5.0;

/// Lyapunov spectrum of the discrete RK4 map along `traj`.
pub fn reference_lyapunov(spec: &SystemSpec, traj: &Trajectory, n_exponents: usize) -> Result<LyapunovResult> {
    reference_lyapunov_with_history(spec, traj, n_exponents, false).map(|(r, _)| r)
}

pub fn reference_lyapunov_with_history(
    spec: &SystemSpec,
    traj: &Trajectory,
    n_exponents: usize,
    keep_history: bool,
) -> Result<(LyapunovResult, Option<TangentHistory>)> {
    if n_exponents == 0 || n_exponents > spec.dim {
        return Err(invalid("number of exponents must be in 1..=dim"));
    }
    let n_skip = traj.time.steps(REFERENCE_SKIP_LT).min(traj.len() / 10);
    let opts = LyapunovOptions {
        n_exponents,
        n_steps: traj.len(),
        n_skip,
        dt: traj.time.dt,
        seed: 0,
        keep_history,
    };
    let mut tangent = GroundTruthTangent::new(spec, traj);
    lyapunov_spectrum(&mut tangent, &opts)
}

/// Per-component min/max scaling onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(traj: &Trajectory, range: Range<usize>) -> Result<Self> {
        if range.is_empty() {
            return Err(invalid("cannot fit a scaler on an empty range"));
        }
        let mut min = vec![f64::INFINITY; traj.dim];
        let mut max = vec![f64::NEG_INFINITY; traj.dim];
        for i in range {
            for (j, &v) in traj.state(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if let Some(component) = (0..traj.dim).find(|&j| max[j] <= min[j]) {
            return Err(Error::DegenerateScaler { component });
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.min.iter().zip(&self.max)).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
    }

    pub fn unscale(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(self.min.iter().zip(&self.max)).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect()
    }

    /// `d scaled_j / d x_j`.
    pub fn slope(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| 1.0 / (hi - lo)).collect()
    }
}

/// Washout / train / test partition of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub washout: Range<usize>,
    pub train: Range<usize>,
    pub test: Range<usize>,
    pub scaler: Scaler,
}

/// Partitions `traj` in Lyapunov-time units and fits the scaler on the training range.
///
/// Training targets are one step ahead, so the sample right after the training
/// range must exist.
pub fn split_and_scale(traj: &Trajectory, washout_lt: f64, train_lt: f64, test_lt: f64) -> Result<DatasetSplit> {
    if washout_lt < 0.0 || !(train_lt > 0.0) || test_lt < 0.0 {
        return Err(invalid("split lengths must be non-negative with a positive training length"));
    }
    let tb = traj.time;
    let (nw, ntr, nte) = (tb.steps(washout_lt), tb.steps(train_lt), tb.steps(test_lt));
    let needed = nw + ntr + nte.max(1);
    if ntr == 0 || needed > traj.len() {
        return Err(invalid(format!("split needs {needed} samples, trajectory has {}", traj.len())));
    }
    let washout = 0..nw;
    let train = nw..nw + ntr;
    let test = nw + ntr..nw + ntr + nte;
    let scaler = Scaler::fit(traj, train.clone())?;
    Ok(DatasetSplit { washout, train, test, scaler })
}
