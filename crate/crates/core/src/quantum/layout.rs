use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Stream};

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 20;

/// How input components fill the `encoding_layers * n` rotation slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Slot `s` carries component `s mod D`, so spare qubits re-upload the input.
    #[default]
    Tiled,
    /// Each component occupies one slot; spare slots stay at angle zero.
    Single,
}

/// Fully connected Ry/CNOT circuit layout.
///
/// Slot `s` sits on layer `s / n`, qubit `s % n`. Component `j` always owns
/// slot `j`; [`Encoding`] decides what the remaining slots carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitLayout {
    pub n_qubits: usize,
    /// Angles of the fixed random unitary, one per qubit.
    pub alpha: Vec<f64>,
    pub input_dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub encoding: Encoding,
}

impl CircuitLayout {
    pub fn new(n_qubits: usize, alpha: Vec<f64>, input_dim: usize, seed: u64) -> Result<Self> {
        let layout = Self { n_qubits, alpha, input_dim, seed, encoding: Encoding::default() };
        layout.validate()?;
        Ok(layout)
    }

    /// Draws `alpha` uniformly from `[0, 4π]`.
    pub fn random(n_qubits: usize, input_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Alpha);
        let alpha = (0..n_qubits).map(|_| rng.random_range(0.0..4.0 * PI)).collect();
        Self::new(n_qubits, alpha, input_dim, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits < 1 || self.n_qubits > MAX_QUBITS {
            return Err(invalid(format!("qubit count must be in 1..={MAX_QUBITS}")));
        }
        if self.alpha.len() != self.n_qubits {
            return Err(invalid("alpha needs one angle per qubit"));
        }
        if self.alpha.iter().any(|a| !(0.0..=4.0 * PI).contains(a)) {
            return Err(invalid("alpha angles must lie in [0, 4π]"));
        }
        if self.input_dim == 0 {
            return Err(invalid("input dimension must be positive"));
        }
        Ok(())
    }

    /// Reservoir size `2^n`.
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn encoding_layers(&self) -> usize {
        self.input_dim.div_ceil(self.n_qubits)
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn n_slots(&self) -> usize {
        self.encoding_layers() * self.n_qubits
    }

    /// `(layer, qubit)` of the first slot carrying input component `j`.
    pub fn slot(&self, j: usize) -> (usize, usize) {
        (j / self.n_qubits, j % self.n_qubits)
    }

    /// Input component carried by slot `s`, if any.
    pub fn slot_input(&self, s: usize) -> Option<usize> {
        match self.encoding {
            Encoding::Tiled => Some(s % self.input_dim),
            Encoding::Single => (s < self.input_dim).then_some(s),
        }
    }

    /// All slots carrying input component `j`.
    pub fn slots_of(&self, j: usize) -> Vec<usize> {
        (0..self.n_slots()).filter(|&s| self.slot_input(s) == Some(j)).collect()
    }

    /// CNOT pairs `(i, j)`, `i < j`, in lexicographic order.
    pub fn entangler(&self) -> Vec<(usize, usize)> {
        let n = self.n_qubits;
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }
}

/// Rotation angles of the encoding block: `π·u_j` in every slot carrying component `j`.
pub fn encode_angles(u_scaled: &[f64], layout: &CircuitLayout) -> Result<Vec<f64>> {
    if u_scaled.len() != layout.input_dim {
        return Err(invalid(format!("input has {} components, layout expects {}", u_scaled.len(), layout.input_dim)));
    }
    Ok((0..layout.n_slots()).map(|s| layout.slot_input(s).map_or(0.0, |j| PI * u_scaled[j])).collect())
}
