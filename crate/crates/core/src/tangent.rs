//! Jacobians of the reservoir update.
//!
//! Circuit derivatives use the parameter-shift rule, which is exact for `Ry`
//! generators: `∂p/∂θ = [p(θ + π/2) − p(θ − π/2)] / 2`. It stays exact under
//! the noise channels too, since they are fixed linear maps that do not
//! depend on the angle.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{Scaler, DIVERGENCE_THRESHOLD};
use crate::error::{invalid, Error, Result};
use crate::quantum::{encode_angles, CircuitModel};
use crate::reservoir::{feedback_input, ReadoutMatrix, Reservoir, Variant, FEEDBACK_CLAMP};
use crate::stability::TangentSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianKind {
    ClosedLoop,
    Conditional,
}

/// Dense Jacobian at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianRecord {
    pub matrix: DMatrix<f64>,
    pub kind: JacobianKind,
    pub at_step: usize,
}

/// `J = decay·I + Σ A_k B_k`, with thin `A_k` (`N_r x m`) and `B_k` (`m x N_r`).
///
/// Applying it to a tangent basis never forms the `N_r x N_r` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredJacobian {
    pub dim: usize,
    pub decay: f64,
    pub terms: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl FactoredJacobian {
    pub fn apply(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = w * self.decay;
        for (a, b) in &self.terms {
            out += a * (b * w);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim) * self.decay;
        for (a, b) in &self.terms {
            m += a * b;
        }
        m
    }
}

fn shift_pair<F>(angles: &[f64], idx: usize, mut eval: F) -> Result<DVector<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut shifted = angles.to_vec();
    shifted[idx] = angles[idx] + FRAC_PI_2;
    let plus = eval(&shifted)?;
    shifted[idx] = angles[idx] - FRAC_PI_2;
    let minus = eval(&shifted)?;
    Ok(DVector::from_iterator(plus.len(), plus.iter().zip(&minus).map(|(a, b)| 0.5 * (a - b))))
}

/// `∂p/∂u` (`N_r x D`) for scaled input `u_scaled`.
///
/// Column `j` sums the shift-rule derivatives of every slot carrying `u_j`,
/// times the encoding slope `π`. A precompiled expansion is differentiated
/// directly instead, which is equally exact.
pub fn parameter_shift_dprobs_du(model: &CircuitModel, u_scaled: &[f64], r_angles: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let layout = &model.layout;
    let xi = encode_angles(u_scaled, layout)?;
    if r_angles.is_none() {
        if let Some(grad) = model.expansion_gradient(&xi) {
            return Ok(DMatrix::from_column_slice(layout.dim(), layout.input_dim, &grad?) * PI);
        }
    }
    let mut out = DMatrix::zeros(layout.dim(), layout.input_dim);
    for s in 0..layout.n_slots() {
        if let Some(j) = layout.slot_input(s) {
            let d = shift_pair(&xi, s, |a| model.probabilities(r_angles, a))?;
            let mut col = out.column_mut(j);
            col.axpy(PI, &d, 1.0);
        }
    }
    Ok(out)
}

/// `∂p/∂φ` (`N_r x n`) with respect to the recurrence-block angles.
pub fn parameter_shift_dprobs_dphi(model: &CircuitModel, u_scaled: &[f64], r_angles: &[f64]) -> Result<DMatrix<f64>> {
    let xi = encode_angles(u_scaled, &model.layout)?;
    let cols = (0..r_angles.len())
        .map(|q| shift_pair(r_angles, q, |a| model.probabilities(Some(a), &xi)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// `ε ∂p/∂r` through the recurrence block, as `(A, Proj)` with `A = ε ∂p/∂φ · diag(π(1 − tanh²))`.
fn recurrence_term(res: &Reservoir, r: &[f64], u_scaled: &[f64]) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>> {
    let (Some(proj), Some(z)) = (res.projection(), res.recurrence_preactivation(r)) else {
        return Ok(None);
    };
    let angles: Vec<f64> = z.iter().map(|v| PI * libm::tanh(*v)).collect();
    let mut a = parameter_shift_dprobs_dphi(res.model(), u_scaled, &angles)?;
    let eps = res.config().epsilon;
    for (q, zq) in z.iter().enumerate() {
        let t = libm::tanh(*zq);
        a.column_mut(q).scale_mut(eps * PI * (1.0 - t * t));
    }
    Ok(Some((a, proj.clone())))
}

/// Jacobian of one closed-loop step `r ↦ (1−ε) r + ε p(clamp(scale(W_outᵀ r)), r)`.
///
/// Components held at the clamp bounds contribute no derivative.
pub fn closed_loop_jacobian(res: &Reservoir, r: &[f64], readout: &ReadoutMatrix, scaler: &Scaler) -> Result<FactoredJacobian> {
    let nr = res.n_states();
    if r.len() != nr || readout.w_out.shape() != (nr, scaler.dim()) {
        return Err(invalid("state, readout and scaler dimensions do not agree"));
    }
    let u_hat = readout.predict(r);
    let scaled = scaler.scale(&u_hat);
    let u = feedback_input(scaler, &u_hat);
    let r_angles = res.recurrence_angles(r);
    let mut a = parameter_shift_dprobs_du(res.model(), &u, r_angles.as_deref())?;
    let eps = res.config().epsilon;
    for (j, slope) in scaler.slope().into_iter().enumerate() {
        let inside = (FEEDBACK_CLAMP.0..=FEEDBACK_CLAMP.1).contains(&scaled[j]);
        a.column_mut(j).scale_mut(if inside { eps * slope } else { 0.0 });
    }
    let mut terms = alloc::vec![(a, readout.w_out.transpose())];
    terms.extend(recurrence_term(res, r, &u)?);
    Ok(FactoredJacobian { dim: nr, decay: 1.0 - eps, terms })
}

/// Jacobian of the driven update with the input held as data.
///
/// For the recurrence-free variant this is `(1−ε) I` and no circuit is run.
pub fn conditional_jacobian(res: &Reservoir, r: &[f64], u_scaled: &[f64]) -> Result<FactoredJacobian> {
    let nr = res.n_states();
    if r.len() != nr {
        return Err(invalid("state dimension does not match the reservoir"));
    }
    let terms = recurrence_term(res, r, u_scaled)?.into_iter().collect();
    Ok(FactoredJacobian { dim: nr, decay: 1.0 - res.config().epsilon, terms })
}

fn record(j: FactoredJacobian, kind: JacobianKind, at_step: usize) -> JacobianRecord {
    JacobianRecord { matrix: j.to_dense(), kind, at_step }
}

/// Dense closed-loop Jacobian of a recurrence-free reservoir.
pub fn jacobian_rfqrc_closed(
    res: &Reservoir,
    r: &[f64],
    readout: &ReadoutMatrix,
    scaler: &Scaler,
    at_step: usize,
) -> Result<JacobianRecord> {
    if res.config().variant != Variant::RfQrc {
        return Err(invalid("expected a recurrence-free reservoir"));
    }
    Ok(record(closed_loop_jacobian(res, r, readout, scaler)?, JacobianKind::ClosedLoop, at_step))
}

/// Dense closed-loop Jacobian of a recurrent reservoir, including `∂p/∂r`.
pub fn jacobian_qrc_closed(
    res: &Reservoir,
    r: &[f64],
    readout: &ReadoutMatrix,
    scaler: &Scaler,
    at_step: usize,
) -> Result<JacobianRecord> {
    if res.config().variant != Variant::Qrc {
        return Err(invalid("expected a recurrent reservoir"));
    }
    Ok(record(closed_loop_jacobian(res, r, readout, scaler)?, JacobianKind::ClosedLoop, at_step))
}

pub fn jacobian_conditional(res: &Reservoir, r: &[f64], u_scaled: &[f64], at_step: usize) -> Result<JacobianRecord> {
    Ok(record(conditional_jacobian(res, r, u_scaled)?, JacobianKind::Conditional, at_step))
}

/// Central-difference Jacobian of `f` at `r`, one column per component.
pub fn finite_difference_jacobian<F>(mut f: F, r: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let mut x = r.to_vec();
    let mut cols = Vec::with_capacity(r.len());
    for i in 0..r.len() {
        x[i] = r[i] + h;
        let plus = f(&x)?;
        x[i] = r[i] - h;
        let minus = f(&x)?;
        x[i] = r[i];
        cols.push(DVector::from_iterator(plus.len(), plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h))));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Closed-loop reservoir as a tangent system.
///
/// The state moves with [`Reservoir::step`] (shot noise included); the
/// Jacobian uses the deterministic circuit model. Predictions are recorded
/// row-major, one per step.
pub struct ClosedLoopTangent<'a> {
    reservoir: &'a mut Reservoir,
    readout: &'a ReadoutMatrix,
    scaler: &'a Scaler,
    state: Vec<f64>,
    steps: usize,
    pub predictions: Vec<f64>,
}

impl<'a> ClosedLoopTangent<'a> {
    pub fn new(reservoir: &'a mut Reservoir, readout: &'a ReadoutMatrix, scaler: &'a Scaler, r_init: Vec<f64>) -> Self {
        Self { reservoir, readout, scaler, state: r_init, steps: 0, predictions: Vec::new() }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

impl TangentSystem for ClosedLoopTangent<'_> {
    fn state_dim(&self) -> usize {
        self.reservoir.n_states()
    }

    fn advance(&mut self, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let u_hat = self.readout.predict(&self.state);
        if u_hat.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)) {
            return Err(Error::ForecastDiverged { step: self.steps });
        }
        let jac = closed_loop_jacobian(self.reservoir, &self.state, self.readout, self.scaler)?;
        self.state = self.reservoir.step(&self.state, &feedback_input(self.scaler, &u_hat))?;
        self.predictions.extend_from_slice(&u_hat);
        self.steps += 1;
        Ok(jac.apply(basis))
    }
}

/// Reservoir driven by a fixed scaled input sequence, for conditional exponents.
pub struct ConditionalTangent<'a> {
    reservoir: &'a mut Reservoir,
    inputs: &'a [Vec<f64>],
    state: Vec<f64>,
    cursor: usize,
}

impl<'a> ConditionalTangent<'a> {
    pub fn new(reservoir: &'a mut Reservoir, inputs: &'a [Vec<f64>], r_init: Vec<f64>) -> Self {
        Self { reservoir, inputs, state: r_init, cursor: 0 }
    }
}

impl TangentSystem for ConditionalTangent<'_> {
    fn state_dim(&self) -> usize {
        self.reservoir.n_states()
    }

    fn advance(&mut self, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let u = self.inputs.get(self.cursor).ok_or_else(|| invalid("drive sequence exhausted"))?;
        let jac = conditional_jacobian(self.reservoir, &self.state, u)?;
        self.state = self.reservoir.step(&self.state, u)?;
        self.cursor += 1;
        Ok(jac.apply(basis))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_trajectory, split_and_scale, SystemSpec};
    use crate::quantum::{CircuitLayout, NoiseModel};
    use crate::reservoir::{train_readout, ReservoirConfig};
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn single_qubit_shift_rule() {
        // One qubit, α = 0: p_1 = sin²(πu/2), dp_1/du = (π/2) sin(πu).
        let layout = CircuitLayout::new(1, vec![0.0], 1, 0).unwrap();
        let d = parameter_shift_dprobs_du(&CircuitModel::statevector(layout), &[0.5], None).unwrap();
        assert_relative_eq!(d[(1, 0)], FRAC_PI_2, epsilon = 1e-14);
        assert_relative_eq!(d[(0, 0)], -FRAC_PI_2, epsilon = 1e-14);
    }

    #[test]
    fn gradient_columns_conserve_probability() {
        use crate::quantum::Encoding;
        let layout = CircuitLayout::random(3, 2, 1).unwrap().with_encoding(Encoding::Single);
        let d = parameter_shift_dprobs_du(&CircuitModel::statevector(layout), &[0.3, 0.6], None).unwrap();
        assert_eq!(d.shape(), (8, 2));
        assert!(d.row_sum().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn linear_map_recovered() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let f = |x: &[f64]| Ok((&a * DVector::from_column_slice(x)).as_slice().to_vec());
        let j = finite_difference_jacobian(f, &[0.3, -0.7], 1e-4).unwrap();
        assert!((j - &a).abs().max() < 1e-10);
    }

    fn trained(variant: Variant, eps: f64) -> (Reservoir, ReadoutMatrix, crate::dynamics::DatasetSplit, Vec<f64>) {
        let spec = SystemSpec::lorenz63();
        let traj = generate_trajectory(&spec, None, 0.01, 800, 500, 3).unwrap();
        let split = split_and_scale(&traj, 1.0, 4.0, 1.0).unwrap();
        let layout = CircuitLayout::random(4, 3, 3).unwrap();
        let cfg = match variant {
            Variant::RfQrc => ReservoirConfig::rf_qrc(layout, eps, vec![1e-9], NoiseModel::None, 3),
            Variant::Qrc => ReservoirConfig::qrc(layout, eps, vec![1e-9], NoiseModel::None, 3),
        }
        .unwrap();
        let mut res = Reservoir::new(cfg).unwrap();
        let run = res.open_loop_run(&traj, &split, None).unwrap();
        let w = train_readout(&run.states, &run.targets, 1e-9).unwrap();
        (res, w, split, run.final_state)
    }

    #[test]
    fn closed_loop_matches_finite_differences() {
        for variant in [Variant::RfQrc, Variant::Qrc] {
            let (res, w, split, r) = trained(variant, 0.3);
            let analytic = closed_loop_jacobian(&res, &r, &w, &split.scaler).unwrap().to_dense();
            let step = |x: &[f64]| res.step_deterministic(x, &feedback_input(&split.scaler, &w.predict(x)));
            let fd = finite_difference_jacobian(step, &r, 1e-6).unwrap();
            let rel = (&analytic - &fd).norm() / analytic.norm();
            assert!(rel < 1e-5, "{variant:?}: {rel}");
        }
    }

    #[test]
    fn conditional_rfqrc_is_isotropic() {
        let (res, _, _, r) = trained(Variant::RfQrc, 0.15);
        let j = jacobian_conditional(&res, &r, &[0.2, 0.4, 0.6], 0).unwrap();
        assert_eq!(j.matrix, DMatrix::identity(16, 16) * 0.85);
        let j2 = jacobian_conditional(&res, &vec![0.5; 16], &[0.9, 0.1, 0.3], 7).unwrap();
        assert_eq!(j.matrix, j2.matrix);
    }

    #[test]
    fn zero_readout_leaves_decay() {
        let (res, w, split, r) = trained(Variant::RfQrc, 0.4);
        let zero = ReadoutMatrix { w_out: DMatrix::zeros(w.w_out.nrows(), w.w_out.ncols()) };
        let j = jacobian_rfqrc_closed(&res, &r, &zero, &split.scaler, 0).unwrap();
        assert!((j.matrix - DMatrix::identity(16, 16) * 0.6).abs().max() < 1e-15);
        assert!(jacobian_qrc_closed(&res, &r, &w, &split.scaler, 0).is_err());
    }
}
