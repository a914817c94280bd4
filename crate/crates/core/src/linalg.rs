//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin Householder QR with the sign convention `diag(R) >= 0`.
pub fn qr_positive(w: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (mut q, mut r) = w.qr().unpack();
    for k in 0..r.nrows().min(r.ncols()) {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    (q, r)
}

/// `rows x cols` matrix with orthonormal columns drawn from a Gaussian ensemble.
pub fn random_orthonormal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let w = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    qr_positive(w).0
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.cholesky()?;
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `m m^T`, accumulated column by column to keep the inner loop contiguous.
pub fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for col in m.column_iter() {
        let c = col.as_slice();
        for j in 0..n {
            let cj = c[j];
            if cj == 0.0 {
                continue;
            }
            let gcol = &mut g.as_mut_slice()[j * n..j * n + j + 1];
            for (gi, ci) in gcol.iter_mut().zip(&c[..=j]) {
                *gi += ci * cj;
            }
        }
    }
    for j in 0..n {
        for i in 0..j {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    libm::sqrt(m.iter().map(|v| v * v).sum::<f64>())
}
