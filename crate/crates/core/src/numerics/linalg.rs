//! Dense linear algebra on top of nalgebra, plus a Cholesky wrapper with a
//! jitter-retry ladder for nearly-singular SPD matrices.

use crate::error::{Error, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

/// Number of jitter doublings tried after the clean attempt.
const JITTER_DOUBLINGS: u32 = 5;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// A failed factorization is retried with `1e-8 * trace(a)/n` added to the
/// diagonal, doubling the jitter up to [`JITTER_DOUBLINGS`] times before
/// giving up with [`Error::NotPositiveDefinite`].
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "cholesky",
            expected: n,
            got: a.ncols(),
        });
    }
    if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
        return Ok(chol.unpack());
    }
    let base = 1e-8 * a.trace() / n as f64;
    // trace can be 0 or negative for a matrix that is not PD; fall back to an
    // absolute floor so the ladder still makes progress.
    let base = if base > 0.0 { base } else { 1e-12 };
    let mut attempts = 1;
    for k in 0..=JITTER_DOUBLINGS {
        let jitter = base * f64::powi(2.0, k as i32);
        let mut ajit = a.clone();
        for i in 0..n {
            ajit[(i, i)] += jitter;
        }
        attempts += 1;
        if let Some(chol) = nalgebra::Cholesky::new(ajit) {
            return Ok(chol.unpack());
        }
    }
    Err(Error::NotPositiveDefinite { n, attempts })
}

/// Log-determinant of the matrix whose Cholesky factor is `l`:
/// `2 * sum(log l_ii)`.
pub fn log_det_chol(l: &Matrix) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..l.nrows().min(l.ncols()) {
        let d = l[(i, i)];
        if d <= 0.0 {
            return Err(Error::NonPositiveDiagonal { index: i, value: d });
        }
        acc += d.ln();
    }
    Ok(2.0 * acc)
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &Vector) -> Vector {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Solve `L^T x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, b: &Vector) -> Vector {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// Solve `A x = b` given the Cholesky factor `L` of `A`.
pub fn chol_solve(l: &Matrix, b: &Vector) -> Vector {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Solve `L X = B` column-wise for a matrix right-hand side.
pub fn solve_lower_mat(l: &Matrix, b: &Matrix) -> Matrix {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}
