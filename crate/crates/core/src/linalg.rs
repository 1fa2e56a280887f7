//! Dense complex factorizations shared by the harmonic and short-circuit paths.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Inverse via partial-pivot LU.
pub fn invert(m: CMatrix) -> Result<CMatrix> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m);
    }
    m.lu()
        .try_inverse()
        .filter(|z| z.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
        .ok_or_else(|| Error::Singular(format!("{n}x{n} admittance matrix")))
}

/// Columns `cols` of the inverse, one LU factorization and |cols| solves.
pub fn inverse_columns(m: CMatrix, cols: &[usize]) -> Result<CMatrix> {
    let n = m.nrows();
    let mut rhs = CMatrix::zeros(n, cols.len());
    for (k, &c) in cols.iter().enumerate() {
        rhs[(c, k)] = Complex64::new(1.0, 0.0);
    }
    let lu = m.lu();
    if !lu.is_invertible() {
        return Err(Error::Singular(format!("{n}x{n} admittance matrix")));
    }
    lu.solve(&rhs)
        .filter(|z| z.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
        .ok_or_else(|| Error::Singular(format!("{n}x{n} admittance matrix")))
}
