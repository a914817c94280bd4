//! Exact trigonometric expansion of circuit probabilities.
//!
//! Input `j` enters through `m_j` rotations `Ry(θ_j)`. Conjugation by each is
//! affine in `(cos θ_j, sin θ_j)` and everything else in the circuit (gates
//! and noise channels alike) is linear in ρ, so every output probability is a
//! trigonometric polynomial of degree `m_j` in `θ_j`:
//!
//! `p(θ) = C φ(θ)`, `φ = ⊗_j (1, cos θ_j, sin θ_j, ..., cos m_j θ_j, sin m_j θ_j)`.
//!
//! `C` is recovered exactly from circuit runs on the grid of `2 m_j + 1`
//! equispaced angles per input, followed by a discrete Fourier transform along
//! each axis. Evaluating the expansion is a single matrix-vector product.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Upper bound on the number of expansion terms (and circuit runs to compile).
pub const MAX_EXPANSION_TERMS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TrigExpansion {
    /// `N_out x Π(2 m_j + 1)`, axis 0 varying fastest.
    coefficients: DMatrix<f64>,
    /// Angle-vector positions sharing each input angle.
    axes: Vec<Vec<usize>>,
    n_angles: usize,
}

fn axis_len(axis: &[usize]) -> usize {
    2 * axis.len() + 1
}

/// Number of terms an expansion over `axes` would need.
pub fn expansion_terms(axes: &[Vec<usize>]) -> usize {
    axes.iter().map(|a| axis_len(a)).fold(1usize, |acc, n| acc.saturating_mul(n))
}

impl TrigExpansion {
    /// Compiles `eval` over `n_angles` angles, where positions in `axes[j]`
    /// all carry the input angle `θ_j` and all other positions are zero.
    pub fn compile<F>(n_angles: usize, axes: Vec<Vec<usize>>, mut eval: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(invalid("every expansion axis needs at least one angle position"));
        }
        if axes.iter().flatten().any(|&a| a >= n_angles) {
            return Err(invalid("angle position out of range"));
        }
        let n_terms = expansion_terms(&axes);
        if n_terms > MAX_EXPANSION_TERMS {
            return Err(invalid("expansion would exceed the term limit"));
        }
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_terms);
        let mut angles = vec![0.0; n_angles];
        for idx in 0..n_terms {
            let mut rest = idx;
            for axis in &axes {
                let n = axis_len(axis);
                let theta = 2.0 * PI * (rest % n) as f64 / n as f64;
                rest /= n;
                axis.iter().for_each(|&a| angles[a] = theta);
            }
            columns.push(eval(&angles)?);
        }
        let n_out = columns[0].len();
        // Samples -> Fourier coefficients, one axis at a time.
        let mut stride = 1;
        let mut buf = Vec::new();
        for axis in &axes {
            let n = axis_len(axis);
            let m = axis.len();
            for base in (0..n_terms).filter(|i| (i / stride) % n == 0) {
                for r in 0..n_out {
                    buf.clear();
                    buf.extend((0..n).map(|l| columns[base + l * stride][r]));
                    columns[base][r] = buf.iter().sum::<f64>() / n as f64;
                    for k in 1..=m {
                        let (mut c, mut s) = (0.0, 0.0);
                        for (l, v) in buf.iter().enumerate() {
                            let (sn, cs) = libm::sincos(2.0 * PI * (k * l) as f64 / n as f64);
                            c += v * cs;
                            s += v * sn;
                        }
                        columns[base + (2 * k - 1) * stride][r] = 2.0 * c / n as f64;
                        columns[base + 2 * k * stride][r] = 2.0 * s / n as f64;
                    }
                }
            }
            stride *= n;
        }
        let coefficients = DMatrix::from_fn(n_out, n_terms, |r, c| columns[c][r]);
        Ok(Self { coefficients, axes, n_angles })
    }

    pub fn n_outputs(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.axes.len()
    }

    pub fn n_terms(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Per-input angles read from a full angle vector.
    pub fn input_angles(&self, angles: &[f64]) -> Result<Vec<f64>> {
        if angles.len() != self.n_angles {
            return Err(invalid("angle vector length does not match the expansion"));
        }
        let mut theta = Vec::with_capacity(self.axes.len());
        for axis in &self.axes {
            let t = angles[axis[0]];
            if axis.iter().any(|&a| angles[a] != t) {
                return Err(invalid("positions sharing an input angle disagree"));
            }
            theta.push(t);
        }
        let mut outside = (0..self.n_angles).filter(|i| !self.axes.iter().any(|a| a.contains(i)));
        if outside.any(|i| angles[i] != 0.0) {
            return Err(invalid("angle outside the expansion is non-zero"));
        }
        Ok(theta)
    }

    fn features(&self, theta: &[f64], derivative: Option<usize>) -> DVector<f64> {
        let mut phi = DVector::from_element(self.n_terms(), 1.0);
        let mut stride = 1;
        let mut axis_basis = Vec::new();
        for (j, axis) in self.axes.iter().enumerate() {
            let n = axis_len(axis);
            axis_basis.clear();
            axis_basis.push(if derivative == Some(j) { 0.0 } else { 1.0 });
            for k in 1..=axis.len() {
                let kf = k as f64;
                let (s, c) = libm::sincos(kf * theta[j]);
                if derivative == Some(j) {
                    axis_basis.extend([-kf * s, kf * c]);
                } else {
                    axis_basis.extend([c, s]);
                }
            }
            for (i, v) in phi.iter_mut().enumerate() {
                *v *= axis_basis[(i / stride) % n];
            }
            stride *= n;
        }
        phi
    }

    /// Probabilities at per-input angles `theta`.
    pub fn evaluate_inputs(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.n_inputs() {
            return Err(invalid("one angle per expansion input expected"));
        }
        Ok((&self.coefficients * self.features(theta, None)).as_slice().to_vec())
    }

    /// Probabilities for a full angle vector.
    pub fn evaluate(&self, angles: &[f64]) -> Result<Vec<f64>> {
        self.evaluate_inputs(&self.input_angles(angles)?)
    }

    /// Exact `∂p/∂θ_j` (`N_out x n_inputs`) at per-input angles `theta`.
    pub fn gradient(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        if theta.len() != self.n_inputs() {
            return Err(invalid("one angle per expansion input expected"));
        }
        let cols: Vec<DVector<f64>> =
            (0..self.n_inputs()).map(|j| &self.coefficients * self.features(theta, Some(j))).collect();
        Ok(DMatrix::from_columns(&cols))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_trig_polynomial() {
        // f = 0.3 + cos a − 2 sin 2a · cos b + 0.5 sin b, a on two positions, b on one.
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[2]);
            Ok(vec![0.3 + a.cos() - 2.0 * (2.0 * a).sin() * b.cos() + 0.5 * b.sin(), a.sin() * b.sin()])
        };
        let e = TrigExpansion::compile(4, vec![vec![0, 1], vec![2]], f).unwrap();
        assert_eq!(e.n_terms(), 15);
        for (a, b) in [(0.3, 1.7), (2.9, -0.4), (1.0, 1.0)] {
            let want = f(&[a, a, b, 0.0]).unwrap();
            let got = e.evaluate(&[a, a, b, 0.0]).unwrap();
            for (w, g) in want.iter().zip(&got) {
                assert_relative_eq!(w, g, epsilon = 1e-13);
            }
            let grad = e.gradient(&[a, b]).unwrap();
            let da = -a.sin() - 4.0 * (2.0 * a).cos() * b.cos();
            assert_relative_eq!(grad[(0, 0)], da, epsilon = 1e-12);
            assert_relative_eq!(grad[(1, 1)], a.sin() * b.cos(), epsilon = 1e-12);
        }
        assert!(e.evaluate(&[0.1, 0.2, 0.0, 0.0]).is_err());
        assert!(e.evaluate(&[0.1, 0.1, 0.0, 0.5]).is_err());
    }
}
