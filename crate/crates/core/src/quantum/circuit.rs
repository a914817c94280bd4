use alloc::vec::Vec;

use super::density::{Channel, DensityMatrix};
use super::expansion::TrigExpansion;
use super::layout::{encode_angles, CircuitLayout};
use super::state::{measure_probabilities, QuantumState};
use crate::error::{invalid, Result};

/// Largest register simulated as a density matrix.
pub const MAX_DENSITY_QUBITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Ry { qubit: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

fn rotation_block(gates: &mut Vec<Gate>, layout: &CircuitLayout, angles: &[f64]) {
    gates.extend(angles.iter().enumerate().map(|(qubit, &angle)| Gate::Ry { qubit, angle }));
    gates.extend(layout.entangler().into_iter().map(|(control, target)| Gate::Cnot { control, target }));
}

/// Gate sequence `V(α) Ξ(θ) P(φ)` from raw rotation angles.
///
/// `p_angles` (one per qubit) drives the optional recurrence block; `xi_angles`
/// holds `encoding_layers * n` encoding angles.
pub fn gates_from_angles(p_angles: Option<&[f64]>, xi_angles: &[f64], layout: &CircuitLayout) -> Result<Vec<Gate>> {
    let n = layout.n_qubits;
    if xi_angles.len() != layout.encoding_layers() * n {
        return Err(invalid("encoding angle count does not match the layout"));
    }
    let mut gates = Vec::with_capacity((layout.encoding_layers() + 2) * (n + n * (n - 1) / 2));
    if let Some(p) = p_angles {
        if p.len() != n {
            return Err(invalid("recurrence block needs one angle per qubit"));
        }
        rotation_block(&mut gates, layout, p);
    }
    for layer in xi_angles.chunks_exact(n) {
        rotation_block(&mut gates, layout, layer);
    }
    rotation_block(&mut gates, layout, &layout.alpha);
    Ok(gates)
}

/// Gate sequence for scaled input `u_scaled` and optional recurrence angles.
pub fn build_gates(u_scaled: &[f64], r_angles: Option<&[f64]>, layout: &CircuitLayout) -> Result<Vec<Gate>> {
    gates_from_angles(r_angles, &encode_angles(u_scaled, layout)?, layout)
}

pub fn run_gates_pure(gates: &[Gate], n_qubits: usize) -> Result<QuantumState> {
    let mut state = QuantumState::zero(n_qubits);
    for gate in gates {
        match *gate {
            Gate::Ry { qubit, angle } => state.apply_ry(qubit, angle)?,
            Gate::Cnot { control, target } => state.apply_cnot(control, target)?,
        }
    }
    Ok(state)
}

/// Density-matrix evolution with `channel` after every gate on each wire it touched.
pub fn run_gates_noisy(gates: &[Gate], n_qubits: usize, channel: &Channel) -> Result<DensityMatrix> {
    if n_qubits > MAX_DENSITY_QUBITS {
        return Err(invalid("density-matrix simulation is limited to 10 qubits"));
    }
    let kraus = channel.kraus()?;
    let mut rho = DensityMatrix::zero(n_qubits);
    for gate in gates {
        match *gate {
            Gate::Ry { qubit, angle } => {
                rho.apply_ry(qubit, angle)?;
                rho.apply_kraus(qubit, &kraus)?;
            }
            Gate::Cnot { control, target } => {
                rho.apply_cnot(control, target)?;
                rho.apply_kraus(control, &kraus)?;
                rho.apply_kraus(target, &kraus)?;
            }
        }
    }
    rho.check_trace()?;
    Ok(rho)
}

/// Noise-free circuit from `|0⟩^⊗n`.
pub fn run_circuit_pure(u_scaled: &[f64], r_angles: Option<&[f64]>, layout: &CircuitLayout) -> Result<QuantumState> {
    run_gates_pure(&build_gates(u_scaled, r_angles, layout)?, layout.n_qubits)
}

/// Populations of the noisy circuit's final density matrix.
pub fn run_circuit_noisy(
    u_scaled: &[f64],
    r_angles: Option<&[f64]>,
    layout: &CircuitLayout,
    channel: &Channel,
) -> Result<Vec<f64>> {
    Ok(run_gates_noisy(&build_gates(u_scaled, r_angles, layout)?, layout.n_qubits, channel)?.probabilities())
}

/// How circuit probabilities are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Statevector,
    Density(Channel),
    /// Precompiled trigonometric expansion; recurrence angles unsupported.
    Expanded(TrigExpansion),
}

/// A layout bound to an evaluation backend.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitModel {
    pub layout: CircuitLayout,
    pub backend: Backend,
}

impl CircuitModel {
    pub fn statevector(layout: CircuitLayout) -> Self {
        Self { layout, backend: Backend::Statevector }
    }

    /// Output probabilities for raw rotation angles.
    pub fn probabilities(&self, p_angles: Option<&[f64]>, xi_angles: &[f64]) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Statevector => {
                let gates = gates_from_angles(p_angles, xi_angles, &self.layout)?;
                Ok(measure_probabilities(&run_gates_pure(&gates, self.layout.n_qubits)?))
            }
            Backend::Density(channel) => {
                let gates = gates_from_angles(p_angles, xi_angles, &self.layout)?;
                Ok(run_gates_noisy(&gates, self.layout.n_qubits, channel)?.probabilities())
            }
            Backend::Expanded(exp) => {
                if p_angles.is_some() {
                    return Err(invalid("expanded backend cannot take recurrence angles"));
                }
                exp.evaluate(xi_angles)
            }
        }
    }

    /// Exact `∂p/∂θ_j` per input from a precompiled expansion; `None` for
    /// backends that are differentiated by parameter shift.
    pub fn expansion_gradient(&self, xi_angles: &[f64]) -> Option<Result<alloc::vec::Vec<f64>>> {
        match &self.backend {
            Backend::Expanded(exp) => Some(
                exp.input_angles(xi_angles).and_then(|t| exp.gradient(&t)).map(|g| g.as_slice().to_vec()),
            ),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_angles_leave_ground_state() {
        let layout = CircuitLayout::new(3, alloc::vec![0.0; 3], 3, 0).unwrap();
        let s = run_circuit_pure(&[0.0; 3], None, &layout).unwrap();
        assert_relative_eq!(s.amplitudes[0].re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gate_counts() {
        let layout = CircuitLayout::random(4, 5, 1).unwrap();
        let gates = build_gates(&[0.3; 5], Some(&[0.1; 4]), &layout).unwrap();
        // P, two encoding layers and V: 4 blocks of 4 Ry + 6 CNOT.
        assert_eq!(gates.len(), 40);
    }

    #[test]
    fn noiseless_channel_matches_statevector() {
        let layout = CircuitLayout::random(4, 3, 5).unwrap();
        let u = [0.2, 0.7, 0.45];
        let pure = measure_probabilities(&run_circuit_pure(&u, Some(&[0.3, 1.0, 2.0, 0.1]), &layout).unwrap());
        for ch in [Channel::Depolarizing(0.0), Channel::AmplitudeDamping(0.0)] {
            let noisy = run_circuit_noisy(&u, Some(&[0.3, 1.0, 2.0, 0.1]), &layout, &ch).unwrap();
            for (a, b) in pure.iter().zip(&noisy) {
                assert_relative_eq!(a, b, epsilon = 1e-14);
            }
        }
    }
}
