//! Dense matrix equation solvers.

mod kway;
mod lyapunov;
mod riccati;

pub use kway::{solve_kway, KwaySolver};
pub use lyapunov::{lyapunov_residual, solve_lyapunov};
pub use riccati::{care, solve_riccati_future, solve_riccati_past, RiccatiSolution};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Largest real part of the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `A⁻¹B` through an LU factorization.
pub(crate) fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("{what} is numerically singular")));
    }
    Ok(x)
}

pub(crate) fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}
