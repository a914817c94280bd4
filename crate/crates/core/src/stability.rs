//! Lyapunov spectra, covariant Lyapunov vectors and synchronization criteria.
//!
//! The spectrum is computed by propagating an orthonormal tangent basis with
//! the one-step Jacobian and re-orthonormalising with QR at every step. The
//! saved `Q`/`R` factors feed Ginelli's backward iteration for the covariant
//! vectors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{qr_positive, random_orthonormal};
use crate::rng::{stream_rng, Stream};

/// A discrete-time system whose tangent map can be applied step by step.
pub trait TangentSystem {
    fn state_dim(&self) -> usize;

    /// Applies the Jacobian at the current state to `basis` and moves the
    /// state forward one step.
    fn advance(&mut self, basis: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// Adapter building a [`TangentSystem`] from a Jacobian provider and a state advancer.
pub struct JacobianDriven<S, J, A> {
    state: S,
    jacobian: J,
    advancer: A,
    dim: usize,
}

impl<S, J, A> JacobianDriven<S, J, A>
where
    J: FnMut(&S) -> Result<DMatrix<f64>>,
    A: FnMut(&S) -> Result<S>,
{
    pub fn new(state: S, dim: usize, jacobian: J, advancer: A) -> Self {
        Self { state, jacobian, advancer, dim }
    }

    pub fn state(&self) -> &S {
        &self.state
    }
}

impl<S, J, A> TangentSystem for JacobianDriven<S, J, A>
where
    J: FnMut(&S) -> Result<DMatrix<f64>>,
    A: FnMut(&S) -> Result<S>,
{
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn advance(&mut self, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let jac = (self.jacobian)(&self.state)?;
        self.state = (self.advancer)(&self.state)?;
        Ok(jac * basis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    /// Number of exponents sought (tangent vectors propagated).
    pub n_exponents: usize,
    pub n_steps: usize,
    /// Leading steps excluded from the averages.
    pub n_skip: usize,
    pub dt: f64,
    /// Seed of the random initial tangent basis.
    pub seed: u64,
    /// Keep `Q` and `R` of every averaged step for covariant vectors.
    pub keep_history: bool,
}

/// Saved QR factors of the averaged window.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentHistory {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    /// Finite-time exponents, one column per step.
    pub finite_time: DMatrix<f64>,
}

impl TangentHistory {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Continuous-time exponents, in descending order.
    pub exponents: Vec<f64>,
    /// `None` when the spectrum is too short to bracket the dimension.
    pub ky_dimension: Option<f64>,
    /// Running means recorded every `convergence_stride` averaged steps.
    pub convergence: Vec<Vec<f64>>,
    pub convergence_stride: usize,
}

/// QR (Benettin-style) Lyapunov spectrum of a tangent system.
pub fn lyapunov_spectrum<T: TangentSystem>(
    system: &mut T,
    opts: &LyapunovOptions,
) -> Result<(LyapunovResult, Option<TangentHistory>)> {
    let n = system.state_dim();
    let k = opts.n_exponents;
    if k == 0 || k > n {
        return Err(invalid(format!("cannot track {k} exponents in a {n}-dimensional tangent space")));
    }
    if opts.n_skip >= opts.n_steps {
        return Err(invalid("n_skip must be smaller than n_steps"));
    }
    if !(opts.dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let n_avg = opts.n_steps - opts.n_skip;
    let stride = (n_avg / 200).max(1);

    let mut rng = stream_rng(opts.seed, Stream::TangentBasis);
    let mut basis = random_orthonormal(n, k, &mut rng);
    let mut sums = vec![0.0; k];
    let mut convergence = Vec::new();
    let mut history = opts.keep_history.then(|| TangentHistory {
        q: Vec::with_capacity(n_avg),
        r: Vec::with_capacity(n_avg),
        finite_time: DMatrix::zeros(k, n_avg),
    });

    for step in 0..opts.n_steps {
        let w = system.advance(&basis)?;
        let (q, r) = qr_positive(w);
        let diag: Vec<f64> = (0..k).map(|i| r[(i, i)]).collect();
        if diag.iter().any(|&d| !(d > 1e-300) || !d.is_finite()) {
            return Err(Error::TangentDegenerate { step });
        }
        if step >= opts.n_skip {
            let idx = step - opts.n_skip;
            for (i, d) in diag.iter().enumerate() {
                let ft = libm::log(*d) / opts.dt;
                sums[i] += ft;
                if let Some(h) = history.as_mut() {
                    h.finite_time[(i, idx)] = ft;
                }
            }
            if (idx + 1) % stride == 0 {
                convergence.push(sums.iter().map(|s| s / (idx + 1) as f64).collect());
            }
            if let Some(h) = history.as_mut() {
                h.q.push(q.clone());
                h.r.push(r);
            }
        }
        basis = q;
    }

    let mut exponents: Vec<f64> = sums.iter().map(|s| s / n_avg as f64).collect();
    exponents.sort_by(|a, b| b.total_cmp(a));
    let ky_dimension = kaplan_yorke(&exponents).ok();
    Ok((LyapunovResult { exponents, ky_dimension, convergence, convergence_stride: stride }, history))
}

/// Kaplan-Yorke dimension of a descending spectrum.
pub fn kaplan_yorke(exponents: &[f64]) -> Result<f64> {
    if exponents.is_empty() {
        return Err(invalid("empty spectrum"));
    }
    if exponents.windows(2).any(|w| w[0] < w[1]) {
        return Err(invalid("exponents must be sorted in descending order"));
    }
    let mut partial = 0.0;
    let mut l = 0;
    for &lam in exponents {
        if partial + lam > 0.0 {
            partial += lam;
            l += 1;
        } else {
            break;
        }
    }
    if l == 0 {
        return Ok(0.0);
    }
    if l == exponents.len() {
        return Err(Error::IllPosed(format!("all {l} partial sums are positive")));
    }
    Ok(l as f64 + partial / exponents[l].abs())
}

/// Covariant Lyapunov vectors with their pairwise angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ClvResult {
    /// One `N x D_t` matrix of unit columns per retained step.
    pub vectors: Vec<DMatrix<f64>>,
    /// Offset of `vectors[0]` within the tangent history.
    pub first_step: usize,
    pub angles: AngleSeries,
}

impl ClvResult {
    /// Maps every vector through `map` (e.g. a readout) and renormalises.
    pub fn project(&self, map: &DMatrix<f64>) -> Result<ClvResult> {
        let vectors: Vec<DMatrix<f64>> = self
            .vectors
            .iter()
            .map(|v| {
                let mut p = map * v;
                normalize_columns(&mut p);
                p
            })
            .collect();
        if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(invalid("projected covariant vector vanished"));
        }
        let angles = clv_angles(&vectors);
        Ok(ClvResult { vectors, first_step: self.first_step, angles })
    }
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
}

/// Ginelli backward iteration over a saved tangent history.
///
/// The last `n_backward_skip` steps serve as the backward transient and are
/// not returned.
pub fn clv_backward(history: &TangentHistory, n_backward_skip: usize, seed: u64) -> Result<ClvResult> {
    let len = history.len();
    if len == 0 || n_backward_skip >= len {
        return Err(invalid("tangent history too short for the backward transient"));
    }
    let k = history.r[0].ncols();
    let mut rng = stream_rng(seed, Stream::CovariantInit);
    let mut c = DMatrix::from_fn(k, k, |i, j| if i <= j { rng.random_range(0.1..1.0) } else { 0.0 });
    normalize_columns(&mut c);

    let kept = len - n_backward_skip;
    let mut vectors = vec![DMatrix::zeros(0, 0); kept];
    for t in (0..len).rev() {
        if t < kept {
            let mut v = &history.q[t] * &c;
            normalize_columns(&mut v);
            vectors[t] = v;
        }
        if t == 0 {
            break;
        }
        // Q_t R_t = J_t Q_{t-1}, hence C_{t-1} ∝ R_t^{-1} C_t column-wise.
        let mut prev = history.r[t]
            .solve_upper_triangular(&c)
            .ok_or(Error::TangentDegenerate { step: t })?;
        normalize_columns(&mut prev);
        if prev.iter().any(|x| !x.is_finite()) {
            return Err(Error::TangentDegenerate { step: t });
        }
        c = prev;
    }
    let angles = clv_angles(&vectors);
    Ok(ClvResult { vectors, first_step: 0, angles })
}

/// Absolute angle in degrees between two unit vectors.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    libm::acos(dot.abs().min(1.0)).to_degrees()
}

/// Time series of pairwise angles, one series per pair `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSeries {
    pub pairs: Vec<(usize, usize)>,
    pub degrees: Vec<Vec<f64>>,
}

pub fn clv_angles(vectors: &[DMatrix<f64>]) -> AngleSeries {
    let k = vectors.first().map_or(0, |v| v.ncols());
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let degrees = pairs
        .iter()
        .map(|&(i, j)| {
            vectors
                .iter()
                .map(|v| angle_between(v.column(i).as_slice(), v.column(j).as_slice()))
                .collect()
        })
        .collect();
    AngleSeries { pairs, degrees }
}

/// Number of one-degree bins used for angle densities.
pub const ANGLE_BINS: usize = 90;

/// Density histogram of angles over `[0, 90]` degrees with one-degree bins.
pub fn angle_pdf(angles: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; ANGLE_BINS];
    for &a in angles {
        let bin = (libm::floor(a).max(0.0) as usize).min(ANGLE_BINS - 1);
        counts[bin] += 1.0;
    }
    let total = angles.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

/// Wasserstein-1 distance (degrees) between two one-degree-bin densities.
pub fn wasserstein1(pdf_a: &[f64], pdf_b: &[f64]) -> f64 {
    let (mut ca, mut cb, mut dist) = (0.0, 0.0, 0.0);
    for (a, b) in pdf_a.iter().zip(pdf_b) {
        ca += a;
        cb += b;
        dist += (ca - cb).abs();
    }
    dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GsClass {
    NoGs,
    GsNonDifferentiable,
    Dgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsVerdict {
    pub max_cle: f64,
    pub lambda_star: f64,
    pub class: GsClass,
}

/// Classifies synchronization from the largest conditional exponent and the
/// most negative exponent of the drive, both in continuous-time units.
pub fn classify_gs(max_cle: f64, lambda_star: f64) -> Result<GsVerdict> {
    if !(lambda_star < 0.0) {
        return Err(invalid("the drive must have a negative exponent"));
    }
    if max_cle.is_nan() {
        return Err(invalid("max CLE is NaN"));
    }
    let class = if max_cle >= 0.0 {
        GsClass::NoGs
    } else if max_cle < lambda_star {
        GsClass::Dgs
    } else {
        GsClass::GsNonDifferentiable
    };
    Ok(GsVerdict { max_cle, lambda_star, class })
}

/// Discrete-map multiplier to continuous-time exponent.
pub fn continuous_exponent(multiplier: f64, dt: f64) -> f64 {
    libm::log(multiplier) / dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn constant_map(diag: &[f64]) -> impl TangentSystem {
        let j = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag));
        let n = diag.len();
        JacobianDriven::new((), n, move |_: &()| Ok(j.clone()), |_: &()| Ok(()))
    }

    fn opts(k: usize, steps: usize, keep: bool) -> LyapunovOptions {
        LyapunovOptions { n_exponents: k, n_steps: steps, n_skip: 10, dt: 0.01, seed: 3, keep_history: keep }
    }

    #[test]
    fn isotropic_contraction_gives_log_rate() {
        let mut sys = constant_map(&[0.79; 6]);
        let (res, _) = lyapunov_spectrum(&mut sys, &opts(3, 200, false)).unwrap();
        for e in res.exponents {
            assert_relative_eq!(e, 0.79f64.ln() / 0.01, max_relative = 1e-12);
        }
        assert_relative_eq!(0.79f64.ln() / 0.01, -23.572, epsilon = 1e-3);
    }

    #[test]
    fn diagonal_map_spectrum() {
        let diag = [1.3, 1.05, 0.9, 0.5];
        let mut sys = constant_map(&diag);
        let o = LyapunovOptions { n_skip: 300, ..opts(4, 600, false) };
        let (res, _) = lyapunov_spectrum(&mut sys, &o).unwrap();
        for (e, a) in res.exponents.iter().zip(diag) {
            assert_relative_eq!(*e, a.ln() / 0.01, max_relative = 1e-10);
        }
    }

    #[test]
    fn clvs_of_diagonal_map_are_axes() {
        let diag = [1.2, 1.0, 0.7];
        let mut sys = constant_map(&diag);
        let (_, hist) = lyapunov_spectrum(&mut sys, &opts(3, 300, true)).unwrap();
        let clv = clv_backward(&hist.unwrap(), 50, 1).unwrap();
        let v = &clv.vectors[100];
        for i in 0..3 {
            assert_relative_eq!(v[(i, i)].abs(), 1.0, epsilon = 1e-8);
        }
        for series in &clv.angles.degrees {
            assert!(series[100] > 89.99);
        }
    }

    #[test]
    fn collapsed_tangent_is_reported() {
        let mut sys = constant_map(&[0.0, 0.0]);
        let err = lyapunov_spectrum(&mut sys, &opts(2, 50, false)).unwrap_err();
        assert_eq!(err, Error::TangentDegenerate { step: 0 });
    }

    #[test]
    fn kaplan_yorke_cases() {
        assert_relative_eq!(kaplan_yorke(&[0.9051, 0.0085, -14.56]).unwrap(), 2.0627, epsilon = 1e-4);
        assert_eq!(kaplan_yorke(&[-0.1, -2.0]).unwrap(), 0.0);
        assert!(matches!(kaplan_yorke(&[0.9, 0.0]), Err(Error::IllPosed(_))));
        assert!(kaplan_yorke(&[-1.0, 0.5]).is_err());
    }

    #[test]
    fn gs_table() {
        assert_eq!(classify_gs(-23.57, -14.57).unwrap().class, GsClass::Dgs);
        assert_eq!(classify_gs(-5.0, -14.57).unwrap().class, GsClass::GsNonDifferentiable);
        assert_eq!(classify_gs(0.1, -14.57).unwrap().class, GsClass::NoGs);
        assert_eq!(classify_gs(0.0, -14.57).unwrap().class, GsClass::NoGs);
        assert!(classify_gs(-1.0, 0.0).is_err());
    }

    #[test]
    fn angles_and_pdfs() {
        assert_eq!(angle_between(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(angle_between(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
        assert_relative_eq!(angle_between(&[1.0, 0.0], &[0.0, 1.0]), 90.0);
        let pdf = angle_pdf(&[0.5, 45.2, 90.0, 89.5]);
        assert_relative_eq!(pdf.iter().sum::<f64>(), 1.0);
        assert_eq!(pdf[89], 0.5);
        let a = angle_pdf(&[10.5; 4]);
        let b = angle_pdf(&[13.5; 4]);
        assert_relative_eq!(wasserstein1(&a, &b), 3.0);
    }
}
