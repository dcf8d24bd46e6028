use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn eigenvalues(m: &Mat<Complex64>) -> Result<Vec<Complex64>> {
    m.eigenvalues().map_err(|e| Error::EigenSolver(format!("{e:?}")))
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::EigenSolver(format!("{e:?}")))
}

pub fn inverse(m: &Mat<Complex64>) -> Mat<Complex64> {
    m.partial_piv_lu().inverse()
}

/// Sorts complex numbers by real part, then imaginary part.
pub fn sort_complex(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn symmetric_sqrt(m: &Mat<f64>) -> Result<Mat<f64>> {
    let evd = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::EigenSolver(format!("{e:?}")))?;
    let u = evd.U();
    let s = evd.S().column_vector();
    let n = m.nrows();
    Ok(Mat::from_fn(n, n, |i, j| {
        (0..n).map(|k| u[(i, k)] * s[k].max(0.0).sqrt() * u[(j, k)]).sum()
    }))
}
