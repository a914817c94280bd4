//! Gate-based reservoir circuit simulation.
//!
//! Only `Ry` rotations and `CNOT`s are needed. The pure path evolves a
//! statevector; the noisy path evolves a density matrix with a single-qubit
//! channel after every gate on each wire the gate touched.

mod circuit;
mod density;
mod expansion;
mod layout;
mod noise;
mod state;

pub use circuit::{build_gates, gates_from_angles, Backend, CircuitModel, MAX_DENSITY_QUBITS, run_circuit_noisy, run_circuit_pure, run_gates_noisy, run_gates_pure, Gate};
pub use density::{amplitude_damping_kraus, depolarizing_apply, depolarizing_kraus, Channel, DensityMatrix, Op2};
pub use expansion::{expansion_terms, TrigExpansion, MAX_EXPANSION_TERMS};
pub use layout::{encode_angles, CircuitLayout, Encoding};
pub use noise::{sample_shots, NoiseModel};
pub use state::{measure_probabilities, QuantumState};

/// Qubit `q` is bit `n - 1 - q` of a basis index, so `|q0 q1 ... >` reads left to right.
#[inline]
pub(crate) fn qubit_mask(n: usize, q: usize) -> usize {
    1 << (n - 1 - q)
}
