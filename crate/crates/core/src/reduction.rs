//! Stokes-type DAE systems and their projection onto the constraint
//! manifold.
//!
//! The DAE is
//!
//! ```text
//! E₁₁ ẋ₁ = A₁₁ x₁ + A₁₂ x₂ + N (x₁ ⊗ x₁) + B₁ u
//!      0 = A₁₂ᵀ x₁ + B₂ u
//!      y = C₁ x₁
//! ```
//!
//! Writing `x₁ = Θ_r x_d − s u` with `Θ_r` an orthonormal basis of
//! `null(A₁₂ᵀ)` and `s = E₁₁⁻¹A₁₂(A₁₂ᵀE₁₁⁻¹A₁₂)⁻¹B₂` satisfies the constraint
//! identically; testing the momentum equation with `Θ_r` removes `x₂` and
//! leaves an ODE in `x_d`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::energy::QuadraticOde;
use crate::kron::kron_vec;
use crate::linalg::lu_solve;
use crate::{Error, Result};

const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StokesDaeSystem {
    pub e11: DMatrix<f64>,
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    /// `n₁ × n₁²`, acting on `x₁ ⊗ x₁`.
    pub n: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
}

impl StokesDaeSystem {
    pub fn new(
        e11: DMatrix<f64>,
        a11: DMatrix<f64>,
        a12: DMatrix<f64>,
        n: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        c1: DMatrix<f64>,
    ) -> Result<Self> {
        let n1 = e11.nrows();
        let n2 = a12.ncols();
        let m = b1.ncols();
        let checks = [
            ("E11", e11.shape(), (n1, n1)),
            ("A11", a11.shape(), (n1, n1)),
            ("A12", a12.shape(), (n1, n2)),
            ("N", n.shape(), (n1, n1 * n1)),
            ("B1", b1.shape(), (n1, m)),
            ("B2", b2.shape(), (n2, m)),
            ("C1", c1.shape(), (c1.nrows(), n1)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!("{name} is {}×{}, expected {}×{}", got.0, got.1, want.0, want.1)));
            }
        }
        if n1 == 0 {
            return Err(Error::Dimension("n₁ must be positive".into()));
        }
        Ok(StokesDaeSystem { e11, a11, a12, n, b1, b2, c1 })
    }

    /// `(n₁, n₂, m, p)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.e11.nrows(), self.a12.ncols(), self.b1.ncols(), self.c1.nrows())
    }

    pub fn has_input_constraint(&self) -> bool {
        self.b2.iter().any(|v| *v != 0.0)
    }

    pub fn quadratic(&self, x1: &DVector<f64>) -> DVector<f64> {
        &self.n * kron_vec(x1, x1)
    }

    /// `A₁₂ᵀx₁ + B₂u`.
    pub fn constraint_residual(&self, x1: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.a12.transpose() * x1 + &self.b2 * u
    }

    /// `E₁₁ẋ₁ − A₁₁x₁ − A₁₂x₂ − N(x₁⊗x₁) − B₁u`.
    pub fn momentum_residual(
        &self,
        x1: &DVector<f64>,
        x1_dot: &DVector<f64>,
        x2: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        &self.e11 * x1_dot - &self.a11 * x1 - &self.a12 * x2 - self.quadratic(x1) - &self.b1 * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `σ_min / σ_max` of E₁₁.
    pub e11_margin: f64,
    /// `σ_min / σ_max` of A₁₂ (1 when `n₂ = 0`).
    pub a12_margin: f64,
    /// `σ_min / σ_max` of `A₁₂ᵀE₁₁⁻¹A₁₂` (1 when `n₂ = 0`).
    pub schur_margin: f64,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "valid")?;
        } else {
            write!(f, "{}", self.failures.join("; "))?;
        }
        write!(
            f,
            " (margins: E11 {:.3e}, A12 {:.3e}, Schur complement {:.3e})",
            self.e11_margin, self.a12_margin, self.schur_margin
        )
    }
}

fn sigma_ratio(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

pub fn validate_stokes_dae(sys: &StokesDaeSystem) -> ValidationReport {
    let (n1, n2, _, _) = sys.dims();
    let mut failures = Vec::new();
    let e11_margin = sigma_ratio(&sys.e11);
    if !(e11_margin > RANK_TOL) {
        failures.push(format!("E11 is singular (σ_min/σ_max = {e11_margin:.3e})"));
    }
    let a12_margin = if n2 > n1 {
        failures.push(format!("A12 has more columns ({n2}) than rows ({n1})"));
        0.0
    } else {
        sigma_ratio(&sys.a12)
    };
    if n2 <= n1 && !(a12_margin > RANK_TOL) {
        failures.push(format!("A12 is rank deficient (σ_min/σ_max = {a12_margin:.3e})"));
    }
    let schur_margin = if n2 == 0 {
        1.0
    } else {
        match lu_solve(&sys.e11, &sys.a12, "E11") {
            Ok(y) => sigma_ratio(&(sys.a12.transpose() * y)),
            Err(_) => 0.0,
        }
    };
    if !(schur_margin > RANK_TOL) {
        failures.push(format!("A12ᵀE11⁻¹A12 is singular (σ_min/σ_max = {schur_margin:.3e})"));
    }
    ValidationReport { e11_margin, a12_margin, schur_margin, failures }
}

/// `Π = I − A₁₂(A₁₂ᵀE₁₁⁻¹A₁₂)⁻¹A₁₂ᵀE₁₁⁻¹`.
pub fn build_projector(e11: &DMatrix<f64>, a12: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n1 = e11.nrows();
    if a12.ncols() == 0 {
        return Ok(DMatrix::identity(n1, n1));
    }
    let y = lu_solve(e11, a12, "E11")?;
    let z = lu_solve(&e11.transpose(), a12, "E11ᵀ")?;
    let s = a12.transpose() * y;
    let w = lu_solve(&s, &z.transpose(), "A12ᵀE11⁻¹A12")?;
    Ok(DMatrix::identity(n1, n1) - a12 * w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorPair {
    pub pi: DMatrix<f64>,
    pub theta_l: DMatrix<f64>,
    pub theta_r: DMatrix<f64>,
}

/// Orthonormal basis of `null(A₁₂ᵀ)`; the first entry of each column with
/// magnitude above 1e−12 is positive.
pub fn null_space_basis(a12: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n1, n2) = a12.shape();
    if n2 > n1 {
        return Err(Error::Dimension(format!("A12 is {n1}×{n2}; needs n₂ ≤ n₁")));
    }
    if n2 == 0 {
        return Ok(DMatrix::identity(n1, n1));
    }
    let mut aug = DMatrix::zeros(n1, n2 + n1);
    aug.view_mut((0, 0), (n1, n2)).copy_from(a12);
    aug.view_mut((0, n2), (n1, n1)).fill_with_identity();
    let q = aug.qr().q();
    let mut basis = q.columns(n2, n1 - n2).into_owned();
    for mut col in basis.column_iter_mut() {
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    let leak = (a12.transpose() * &basis).norm();
    if leak > 1e-10 * (1.0 + a12.norm()) {
        return Err(Error::Singular(format!("A12 is rank deficient (null-space leak {leak:.3e})")));
    }
    Ok(basis)
}

/// `Θ_r` from [`null_space_basis`] and `Θ_ℓ = ΠΘ_r`.
pub fn factor_projector(pi: &DMatrix<f64>, a12: &DMatrix<f64>) -> Result<ProjectorPair> {
    let theta_r = null_space_basis(a12)?;
    Ok(ProjectorPair { pi: pi.clone(), theta_l: pi * &theta_r, theta_r })
}

/// The reduced system
///
/// ```text
/// E_d ẋ_d = A_d x_d + N_d (x_d⊗x_d) + B u + G_ℓ (x_d⊗u) + G_r (u⊗x_d) + S_d (u⊗u)
///       y = C_d x_d + D_d u
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOdeSystem {
    pub e_d: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    pub n_d: DMatrix<f64>,
    pub b_const: DMatrix<f64>,
    /// `−Θ_rᵀN(Θ_r ⊗ s)`, acting on `x_d ⊗ u`.
    pub g_left: DMatrix<f64>,
    /// `−Θ_rᵀN(s ⊗ Θ_r)`, acting on `u ⊗ x_d`.
    pub g_right: DMatrix<f64>,
    /// `Θ_rᵀN(s ⊗ s)`, acting on `u ⊗ u`.
    pub s_d: DMatrix<f64>,
    /// `E₁₁⁻¹A₁₂(A₁₂ᵀE₁₁⁻¹A₁₂)⁻¹B₂`, `n₁ × m`.
    pub s: DMatrix<f64>,
    pub c_d: DMatrix<f64>,
    pub d_d: DMatrix<f64>,
    pub projectors: ProjectorPair,
}

impl ReducedOdeSystem {
    pub fn dim(&self) -> usize {
        self.e_d.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b_const.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c_d.nrows()
    }

    pub fn has_input_coupling(&self) -> bool {
        self.s.iter().any(|v| *v != 0.0)
    }

    /// `B + G(x)`, so that the input terms read `(B + G(x))u + S_d(u⊗u)`.
    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        input_matrix(&self.b_const, &self.g_left, &self.g_right, x)
    }

    /// Right-hand side `E_d ẋ_d` of the reduced dynamics.
    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_d * x + &self.n_d * kron_vec(x, x) + self.input_matrix(x) * u + &self.s_d * kron_vec(u, u)
    }

    /// The same system multiplied through by `E_d⁻¹`.
    pub fn normalized(&self) -> Result<QuadraticOde> {
        let e = &self.e_d;
        Ok(QuadraticOde {
            a: lu_solve(e, &self.a_d, "E_d")?,
            n_quad: lu_solve(e, &self.n_d, "E_d")?,
            b: lu_solve(e, &self.b_const, "E_d")?,
            g_left: lu_solve(e, &self.g_left, "E_d")?,
            g_right: lu_solve(e, &self.g_right, "E_d")?,
            s_quad: lu_solve(e, &self.s_d, "E_d")?,
            c: self.c_d.clone(),
        })
    }

    /// `x₁ = Θ_r x_d − s u`.
    pub fn lift_state(&self, x_d: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.projectors.theta_r * x_d - &self.s * u
    }

    /// `ẋ₁ = Θ_r ẋ_d − s u̇`.
    pub fn lift_derivative(&self, x_d_dot: &DVector<f64>, u_dot: &DVector<f64>) -> DVector<f64> {
        &self.projectors.theta_r * x_d_dot - &self.s * u_dot
    }

    /// Differential coordinates of a constraint-consistent `x₁`.
    pub fn project_state(&self, x1: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.projectors.theta_r.transpose() * (x1 + &self.s * u)
    }

    pub fn output(&self, x_d: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c_d * x_d + &self.d_d * u
    }
}

pub(crate) fn input_matrix(
    b: &DMatrix<f64>,
    g_left: &DMatrix<f64>,
    g_right: &DMatrix<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let (r, m) = b.shape();
    let mut out = b.clone();
    if m == 0 || g_left.iter().all(|v| *v == 0.0) && g_right.iter().all(|v| *v == 0.0) {
        return out;
    }
    for c in 0..m {
        let mut col = out.column_mut(c);
        for i in 0..r {
            // G_ℓ(x ⊗ e_c) + G_r(e_c ⊗ x)
            col += g_left.column(i * m + c) * x[i] + g_right.column(c * r + i) * x[i];
        }
    }
    out
}

pub fn lift_state(reduced: &ReducedOdeSystem, x_d: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    reduced.lift_state(x_d, u)
}

pub fn reduce_system(sys: &StokesDaeSystem) -> Result<ReducedOdeSystem> {
    let report = validate_stokes_dae(sys);
    if !report.is_valid() {
        return Err(Error::InvalidSystem(report));
    }
    let pi = build_projector(&sys.e11, &sys.a12)?;
    let pair = factor_projector(&pi, &sys.a12)?;
    assemble_reduced(sys, pair)
}

/// Reduction with a caller-supplied orthonormal basis of `null(A₁₂ᵀ)`.
pub fn reduce_system_with_basis(sys: &StokesDaeSystem, theta_r: &DMatrix<f64>) -> Result<ReducedOdeSystem> {
    let report = validate_stokes_dae(sys);
    if !report.is_valid() {
        return Err(Error::InvalidSystem(report));
    }
    let (n1, n2, _, _) = sys.dims();
    if theta_r.shape() != (n1, n1 - n2) {
        return Err(Error::Dimension(format!("basis must be {}×{}", n1, n1 - n2)));
    }
    let ortho = (theta_r.transpose() * theta_r - DMatrix::identity(n1 - n2, n1 - n2)).norm();
    let leak = (sys.a12.transpose() * theta_r).norm();
    if ortho > 1e-10 || leak > 1e-10 * (1.0 + sys.a12.norm()) {
        return Err(Error::InvalidArgument("basis is not an orthonormal basis of null(A12ᵀ)".into()));
    }
    let pi = build_projector(&sys.e11, &sys.a12)?;
    let pair = ProjectorPair { theta_l: &pi * theta_r, pi, theta_r: theta_r.clone() };
    assemble_reduced(sys, pair)
}

fn assemble_reduced(sys: &StokesDaeSystem, pair: ProjectorPair) -> Result<ReducedOdeSystem> {
    let (n1, n2, m, _) = sys.dims();
    let th = &pair.theta_r;
    let tht = th.transpose();
    let s = if n2 == 0 {
        DMatrix::zeros(n1, m)
    } else {
        let y = lu_solve(&sys.e11, &sys.a12, "E11")?;
        let schur = sys.a12.transpose() * &y;
        y * lu_solve(&schur, &sys.b2, "A12ᵀE11⁻¹A12")?
    };
    let n_d = &tht * &sys.n * th.kronecker(th);
    let g_left = -(&tht * &sys.n * th.kronecker(&s));
    let g_right = -(&tht * &sys.n * s.kronecker(th));
    let s_d = &tht * &sys.n * s.kronecker(&s);
    Ok(ReducedOdeSystem {
        e_d: &tht * &sys.e11 * th,
        a_d: &tht * &sys.a11 * th,
        n_d,
        b_const: &tht * (&sys.b1 - &sys.a11 * &s),
        g_left,
        g_right,
        s_d,
        c_d: &sys.c1 * th,
        d_d: -(&sys.c1 * &s),
        s,
        projectors: pair,
    })
}

/// Least-squares `x₂` from the momentum equation
/// `A₁₂x₂ = E₁₁ẋ₁ − A₁₁x₁ − N(x₁⊗x₁) − B₁u`.
pub fn recover_algebraic(
    sys: &StokesDaeSystem,
    x1: &DVector<f64>,
    x1_dot: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let rhs = &sys.e11 * x1_dot - &sys.a11 * x1 - sys.quadratic(x1) - &sys.b1 * u;
    recover_from_rhs(&sys.a12, &rhs)
}

pub(crate) fn recover_from_rhs(a12: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n2 = a12.ncols();
    if n2 == 0 {
        return Ok(DVector::zeros(0));
    }
    let qr = a12.clone().qr();
    let qtb = qr.q().transpose() * rhs;
    let x2 = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("A12 is rank deficient".into()))?;
    let out_of_range = (a12 * &x2 - rhs).norm();
    if out_of_range > 1e-6 * rhs.norm().max(1.0) {
        return Err(Error::InconsistentState(out_of_range));
    }
    Ok(x2)
}
