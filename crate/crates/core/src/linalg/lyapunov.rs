use nalgebra::DMatrix;

use super::kway::KwaySolver;
use crate::kron::{unvec, vec_of};
use crate::{Error, Result};

/// Solves `AᵀX + XA + Q = 0` for symmetric `Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov equation needs square A and Q of equal size, got {:?} and {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let solver = KwaySolver::new(a, None)?;
    let x = solver.solve(2, &(-vec_of(q))).map_err(|e| match e {
        Error::IllConditioned { min_sum, .. } => Error::ResonantSpectrum(min_sum),
        other => other,
    })?;
    let x = unvec(&x, n, n);
    Ok((&x + x.transpose()) * 0.5)
}

pub fn lyapunov_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (a.transpose() * x + x * a + q).norm()
}
