use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::qubit_mask;
use crate::error::{invalid, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// 2x2 complex operator, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Op2(pub [[Complex64; 2]; 2]);

impl Op2 {
    pub fn real(m: [[f64; 2]; 2]) -> Self {
        Op2([
            [Complex64::new(m[0][0], 0.0), Complex64::new(m[0][1], 0.0)],
            [Complex64::new(m[1][0], 0.0), Complex64::new(m[1][1], 0.0)],
        ])
    }

    pub fn identity() -> Self {
        Op2([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn dagger(&self) -> Self {
        let m = self.0;
        Op2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn mul(&self, other: &Op2) -> Op2 {
        let (a, b) = (self.0, other.0);
        let mut out = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Op2(out)
    }

    pub fn add(&self, other: &Op2) -> Op2 {
        let mut out = self.0;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += other.0[i][j];
            }
        }
        Op2(out)
    }

    pub fn scale(&self, s: f64) -> Op2 {
        let mut out = self.0;
        out.iter_mut().flatten().for_each(|v| *v *= s);
        Op2(out)
    }

    /// `K ρ K†` for a 2x2 `ρ`.
    pub fn conjugate(&self, rho: &Op2) -> Op2 {
        self.mul(rho).mul(&self.dagger())
    }

    pub fn max_abs_diff(&self, other: &Op2) -> f64 {
        self.0.iter().flatten().zip(other.0.iter().flatten()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// Kraus operators `K0 = diag(1, √(1-p))`, `K1 = [[0, √p], [0, 0]]`.
pub fn amplitude_damping_kraus(p: f64) -> Result<[Op2; 2]> {
    check_probability(p)?;
    Ok([Op2::real([[1.0, 0.0], [0.0, libm::sqrt(1.0 - p)]]), Op2::real([[0.0, libm::sqrt(p)], [0.0, 0.0]])])
}

/// Pauli-form Kraus operators of `ρ -> (1-p)ρ + p I/2`.
pub fn depolarizing_kraus(p: f64) -> Result<[Op2; 4]> {
    check_probability(p)?;
    let a = libm::sqrt(1.0 - 0.75 * p);
    let b = libm::sqrt(0.25 * p);
    let i = Complex64::new(0.0, 1.0);
    let y = Op2([[ZERO, -i], [i, ZERO]]);
    Ok([
        Op2::identity().scale(a),
        Op2::real([[0.0, 1.0], [1.0, 0.0]]).scale(b),
        y.scale(b),
        Op2::real([[1.0, 0.0], [0.0, -1.0]]).scale(b),
    ])
}

/// `(1-p)ρ + p·tr(ρ)·I/2` on a single-qubit density matrix.
pub fn depolarizing_apply(rho: &Op2, p: f64) -> Result<Op2> {
    check_probability(p)?;
    let tr = rho.0[0][0] + rho.0[1][1];
    let mixed = Op2([[tr * 0.5, ZERO], [ZERO, tr * 0.5]]);
    Ok(rho.scale(1.0 - p).add(&mixed.scale(p)))
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("noise probability must lie in [0, 1]"));
    }
    Ok(())
}

/// Single-qubit incoherent noise channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Channel {
    Depolarizing(f64),
    AmplitudeDamping(f64),
}

impl Channel {
    pub fn kraus(&self) -> Result<Vec<Op2>> {
        Ok(match *self {
            Channel::Depolarizing(p) => depolarizing_kraus(p)?.to_vec(),
            Channel::AmplitudeDamping(p) => amplitude_damping_kraus(p)?.to_vec(),
        })
    }

    pub fn probability(&self) -> f64 {
        match *self {
            Channel::Depolarizing(p) | Channel::AmplitudeDamping(p) => p,
        }
    }
}

/// Dense `2^n x 2^n` density matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub entries: Vec<Complex64>,
    pub n_qubits: usize,
}

impl DensityMatrix {
    /// `|0...0⟩⟨0...0|`.
    pub fn zero(n_qubits: usize) -> Self {
        let dim = 1 << n_qubits;
        let mut entries = vec![ZERO; dim * dim];
        entries[0] = ONE;
        Self { entries, n_qubits }
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn from_pure(amplitudes: &[Complex64]) -> Result<Self> {
        let dim = amplitudes.len();
        if !dim.is_power_of_two() || dim < 2 {
            return Err(invalid("amplitude count must be a power of two"));
        }
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                entries[i * dim + j] = amplitudes[i] * amplitudes[j].conj();
            }
        }
        Ok(Self { entries, n_qubits: dim.trailing_zeros() as usize })
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.dim() + j]
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    /// `max |ρ - ρ†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut err: f64 = 0.0;
        for i in 0..d {
            for j in 0..=i {
                err = err.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        err
    }

    /// Computational-basis populations.
    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i).re).collect()
    }

    /// Trace norm of `self - other`, via the eigenvalues of the Hermitian difference.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let d = self.dim();
        let m = nalgebra::DMatrix::from_fn(d, d, |i, j| self.get(i, j) - other.get(i, j));
        let eig = nalgebra::linalg::SymmetricEigen::new(m);
        eig.eigenvalues.iter().map(|v| v.abs()).sum()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(invalid("qubit index out of range"));
        }
        Ok(())
    }

    /// `ρ -> Σ_m K_m ρ K_m†` with every `K_m` acting on `qubit`.
    pub fn apply_kraus(&mut self, qubit: usize, ops: &[Op2]) -> Result<()> {
        self.check_qubit(qubit)?;
        let d = self.dim();
        let mask = qubit_mask(self.n_qubits, qubit);
        for a0 in (0..d).filter(|a| a & mask == 0) {
            let a1 = a0 | mask;
            for b0 in (0..d).filter(|b| b & mask == 0) {
                let b1 = b0 | mask;
                let block = Op2([
                    [self.entries[a0 * d + b0], self.entries[a0 * d + b1]],
                    [self.entries[a1 * d + b0], self.entries[a1 * d + b1]],
                ]);
                let mut out = Op2([[ZERO; 2]; 2]);
                for k in ops {
                    out = out.add(&k.conjugate(&block));
                }
                self.entries[a0 * d + b0] = out.0[0][0];
                self.entries[a0 * d + b1] = out.0[0][1];
                self.entries[a1 * d + b0] = out.0[1][0];
                self.entries[a1 * d + b1] = out.0[1][1];
            }
        }
        Ok(())
    }

    pub fn apply_ry(&mut self, qubit: usize, angle: f64) -> Result<()> {
        let (s, c) = libm::sincos(0.5 * angle);
        self.apply_kraus(qubit, &[Op2::real([[c, -s], [s, c]])])
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(invalid("control and target must differ"));
        }
        let d = self.dim();
        let cm = qubit_mask(self.n_qubits, control);
        let tm = qubit_mask(self.n_qubits, target);
        let flip = |i: usize| if i & cm != 0 { i ^ tm } else { i };
        let old = core::mem::take(&mut self.entries);
        self.entries = (0..d * d).map(|idx| old[flip(idx / d) * d + flip(idx % d)]).collect();
        Ok(())
    }

    pub fn apply_channel(&mut self, qubit: usize, channel: &Channel) -> Result<()> {
        self.apply_kraus(qubit, &channel.kraus()?)
    }

    pub(crate) fn check_trace(&self) -> Result<()> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::NumericIntegrity { trace: tr.re });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn completeness(ops: &[Op2]) -> f64 {
        let sum = ops.iter().fold(Op2([[ZERO; 2]; 2]), |acc, k| acc.add(&k.dagger().mul(k)));
        sum.max_abs_diff(&Op2::identity())
    }

    #[test]
    fn amplitude_damping_examples() {
        let [k0, k1] = amplitude_damping_kraus(0.0).unwrap();
        assert_eq!(k0, Op2::identity());
        assert_eq!(k1, Op2::real([[0.0; 2]; 2]));
        let one = Op2::real([[0.0, 0.0], [0.0, 1.0]]);
        let [k0, k1] = amplitude_damping_kraus(1.0).unwrap();
        let out = k0.conjugate(&one).add(&k1.conjugate(&one));
        assert_eq!(out, Op2::real([[1.0, 0.0], [0.0, 0.0]]));
        for p in [0.0, 0.001, 0.37, 1.0] {
            assert!(completeness(&amplitude_damping_kraus(p).unwrap()) < 1e-15);
            assert!(completeness(&depolarizing_kraus(p).unwrap()) < 1e-15);
        }
        assert!(amplitude_damping_kraus(1.5).is_err());
        assert!(amplitude_damping_kraus(-0.1).is_err());
    }

    #[test]
    fn depolarizing_examples() {
        let rho = Op2([[Complex64::new(0.6, 0.0), Complex64::new(0.1, 0.2)], [Complex64::new(0.1, -0.2), Complex64::new(0.4, 0.0)]]);
        assert_eq!(depolarizing_apply(&rho, 0.0).unwrap(), rho);
        assert!(depolarizing_apply(&rho, 1.0).unwrap().max_abs_diff(&Op2::identity().scale(0.5)) < 1e-15);
        let zero = Op2::real([[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(depolarizing_apply(&zero, 0.5).unwrap(), Op2::real([[0.75, 0.0], [0.0, 0.25]]));
        for p in [0.0, 0.3, 1.0] {
            let via_kraus = depolarizing_kraus(p).unwrap().iter().fold(Op2([[ZERO; 2]; 2]), |acc, k| acc.add(&k.conjugate(&rho)));
            assert!(via_kraus.max_abs_diff(&depolarizing_apply(&rho, p).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn register_channel_matches_single_qubit_formula() {
        let mut rho = DensityMatrix::zero(2);
        rho.apply_ry(1, 1.1).unwrap();
        rho.apply_channel(1, &Channel::Depolarizing(0.3)).unwrap();
        let (s, c) = (0.55f64).sin_cos();
        let single = Op2::real([[c * c, c * s], [s * c, s * s]]);
        let expected = depolarizing_apply(&single, 0.3).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(rho.get(i, j).re, expected.0[i][j].re, epsilon = 1e-15);
            }
        }
        assert_relative_eq!(rho.trace().re, 1.0, epsilon = 1e-15);
        assert!(rho.hermiticity_error() < 1e-15);
    }

    #[test]
    fn cnot_permutes_populations() {
        let mut rho = DensityMatrix::zero(2);
        rho.apply_ry(0, core::f64::consts::PI).unwrap();
        rho.apply_cnot(0, 1).unwrap();
        assert_relative_eq!(rho.probabilities()[3], 1.0, epsilon = 1e-15);
    }
}
