use nalgebra::DMatrix;

use super::{lu_solve, solve_lyapunov, spectral_abscissa, symmetric_part};
use crate::{Error, Result};

const SIGN_MAX_ITER: usize = 100;
const SIGN_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 20;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub w: DMatrix<f64>,
    pub residual_norm: f64,
    /// Largest real part of the closed-loop spectrum.
    pub closed_loop_spectrum_abscissa: f64,
}

fn care_residual(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * x + x * a + q - x * g * x
}

/// Matrix sign function by the scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = h.nrows();
    let mut z = h.clone();
    for _ in 0..SIGN_MAX_ITER {
        let lu = z.clone().lu();
        let log_det: f64 = (0..dim).map(|i| lu.u()[(i, i)].abs().ln()).sum();
        if !log_det.is_finite() {
            return Err(Error::NoStabilizingSolution(
                "Hamiltonian matrix has eigenvalues on the imaginary axis".into(),
            ));
        }
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::NoStabilizingSolution("singular iterate in sign iteration".into()))?;
        let c = (log_det / dim as f64).exp();
        let next = (&z / c + inv * c) * 0.5;
        let change = (&next - &z).norm();
        let size = next.norm();
        z = next;
        if !size.is_finite() {
            break;
        }
        if change <= SIGN_TOL * size {
            return Ok(z);
        }
    }
    Err(Error::IterationLimit { method: "matrix sign", iterations: SIGN_MAX_ITER })
}

/// Stabilizing solution of `AᵀX + XA + Q − XGX = 0` (`G`, `Q` symmetric),
/// i.e. `A − GX` Hurwitz.
pub fn care(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || g.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::Dimension("Riccati coefficients must be square and of equal size".into()));
    }
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let s = matrix_sign(&h)?;
    let id = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&s.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(s.view((n, n), (n, n)) + &id));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(s.view((0, 0), (n, n)) + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-s.view((n, 0), (n, n))));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::NoStabilizingSolution(e.to_string()))?;
    let mut x = symmetric_part(&x);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoStabilizingSolution("invariant subspace is not a graph".into()));
    }

    // Newton–Kleinman refinement
    let mut res = care_residual(a, g, q, &x).norm();
    for _ in 0..NEWTON_MAX_ITER {
        if res <= 1e-14 * (1.0 + x.norm()) {
            break;
        }
        let ac = a - g * &x;
        let rhs = q + &x * g * &x;
        let next = match solve_lyapunov(&ac, &rhs) {
            Ok(v) => v,
            Err(_) => break,
        };
        let next_res = care_residual(a, g, q, &next).norm();
        if !(next_res < res) {
            break;
        }
        x = next;
        res = next_res;
    }
    if spectral_abscissa(&(a - g * &x)) >= 0.0 {
        return Err(Error::NoStabilizingSolution(
            "closed loop is not asymptotically stable; check stabilizability and detectability".into(),
        ));
    }
    Ok(x)
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<usize> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n {
        return Err(Error::Dimension(format!(
            "incompatible shapes A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    Ok(n)
}

/// Solves `AᵀWE + EᵀWA + CᵀC − η EᵀWBBᵀWE = 0` (`E = I` when omitted) for
/// the solution that makes `E⁻¹(A − ηBBᵀWE)` stable.
pub fn solve_riccati_future(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    e: Option<&DMatrix<f64>>,
    eta: f64,
) -> Result<RiccatiSolution> {
    check_shapes(a, b, c)?;
    let (ah, bh) = match e {
        Some(e) => (lu_solve(e, a, "E")?, lu_solve(e, b, "E")?),
        None => (a.clone(), b.clone()),
    };
    let q = c.transpose() * c;
    let g = &bh * bh.transpose() * eta;
    let wbar = if eta == 0.0 {
        if spectral_abscissa(&ah) >= 0.0 {
            return Err(Error::NoStabilizingSolution(
                "η = 0 requires an asymptotically stable A".into(),
            ));
        }
        solve_lyapunov(&ah, &q)?
    } else {
        care(&ah, &g, &q)?
    };
    let abscissa = spectral_abscissa(&(&ah - &g * &wbar));
    let w = match e {
        Some(e) => {
            let et = e.transpose();
            let left = lu_solve(&et, &wbar, "Eᵀ")?;
            symmetric_part(&lu_solve(&et, &left.transpose(), "Eᵀ")?.transpose())
        }
        None => wbar,
    };
    let residual = {
        let (ae, ee) = match e {
            Some(e) => (a.clone(), e.clone()),
            None => (a.clone(), DMatrix::identity(a.nrows(), a.nrows())),
        };
        let we = &w * &ee;
        ae.transpose() * &we + we.transpose() * &ae + &q - we.transpose() * b * b.transpose() * &we * eta
    };
    Ok(RiccatiSolution {
        residual_norm: residual.norm(),
        closed_loop_spectrum_abscissa: abscissa,
        w,
    })
}

/// Solves `AᵀV + VA − ηCᵀC + VBBᵀV = 0` for the solution that makes
/// `−(A + BBᵀV)` stable.
pub fn solve_riccati_past(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, eta: f64) -> Result<RiccatiSolution> {
    check_shapes(a, b, c)?;
    let g = b * b.transpose();
    let q = c.transpose() * c * eta;
    let v = care(&(-a), &g, &q)?;
    let residual = a.transpose() * &v + &v * a - &q + &v * &g * &v;
    Ok(RiccatiSolution {
        residual_norm: residual.norm(),
        closed_loop_spectrum_abscissa: spectral_abscissa(&(-(a + &g * &v))),
        w: v,
    })
}
