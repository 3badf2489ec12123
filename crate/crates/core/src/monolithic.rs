//! Energy coefficients from the original matrices of a Stokes-type system
//! with `B₂ = 0`.
//!
//! With `Θ_r` an orthonormal basis of `null(A₁₂ᵀ)`, the lifted coefficients
//! `ŵ_k = Θ_r^{⊗k} w̃_k` solve bordered saddle-point systems assembled from
//! `E₁₁`, `A₁₁`, `A₁₂`, `N` and `B₁` alone. Here `w̃_k` is related to the
//! reduced-coordinate coefficient by `w_k = (E_dᵀ)^{⊗k} w̃_k`.

use faer::linalg::solvers::Solve;
use faer::MatRef;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{EnergyKind, EnergyPolynomial};
use crate::kron::{
    build_lk, build_mk, contract_last, kron_apply_unchecked, kron_chain, mode_product, symmetrize, unvec, vec_of,
    BlockKroneckerMatrix, MAX_DENSE_ENTRIES,
};
use crate::linalg::{lu_solve, solve_riccati_future};
use crate::reduction::{build_projector, null_space_basis, reduce_system, ProjectorPair, ReducedOdeSystem, StokesDaeSystem};
use crate::{Error, Result};

/// Largest bordered side solved by dense LU under [`BorderedSolve::Auto`].
pub const DIRECT_MAX_SIDE: usize = 8000;
/// Exact (SVD) rank is computed up to this side; beyond it full rank is
/// certified from a condition estimate.
const SVD_RANK_MAX_SIDE: usize = 2000;
const PINV_RTOL: f64 = 1e-12;
const GMRES_RESTART: usize = 60;
const GMRES_MAX_ITER: usize = 5000;
const KRYLOV_TOL: f64 = 1e-13;

/// `2n₁^k − (n₁−n₂)^k`.
pub fn bordered_side(n1: usize, n2: usize, k: usize) -> usize {
    2 * n1.pow(k as u32) - (n1 - n2).pow(k as u32)
}

fn require_constant_input(sys: &StokesDaeSystem) -> Result<()> {
    if sys.has_input_constraint() {
        return Err(Error::Unsupported(
            "the monolithic formulation requires B₂ = 0; use the projected method".into(),
        ));
    }
    Ok(())
}

/// `R = I − A₁₂A₁₂⁺` and an orthonormal `Q₁` with `R = Q₁Q₁ᵀ`.
pub fn build_orthogonal_r(a12: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n1, n2) = a12.shape();
    if n2 == 0 {
        return Ok((DMatrix::identity(n1, n1), DMatrix::identity(n1, n1)));
    }
    if n2 > n1 {
        return Err(Error::Dimension(format!("A12 is {n1}×{n2}; needs n₂ ≤ n₁")));
    }
    let svd = a12.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > PINV_RTOL * smax) {
        return Err(Error::Singular(format!(
            "A12 is rank deficient (σ_min/σ_max = {:.3e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let u = svd.u.expect("left singular vectors requested");
    let r = DMatrix::identity(n1, n1) - &u * u.transpose();
    let q1 = null_space_basis(a12)?;
    Ok((r, q1))
}

/// Columns of `I_{n₁}` at the non-pivot columns of `A₁₂ᵀ` under elimination
/// with complete pivoting (ties go to the lowest column index).
pub fn build_itilde(a12: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = a12.transpose();
    let (rows, cols) = m.shape();
    let scale = m.amax();
    let mut row_used = vec![false; rows];
    let mut is_pivot = vec![false; cols];
    if scale > 0.0 {
        for _ in 0..rows.min(cols) {
            let mut best: Option<(usize, usize)> = None;
            let mut best_val = 0.0;
            for c in (0..cols).filter(|&c| !is_pivot[c]) {
                for r in (0..rows).filter(|&r| !row_used[r]) {
                    if m[(r, c)].abs() > best_val {
                        best_val = m[(r, c)].abs();
                        best = Some((r, c));
                    }
                }
            }
            let Some((pr, pc)) = best else { break };
            if best_val <= PINV_RTOL * scale {
                break;
            }
            row_used[pr] = true;
            is_pivot[pc] = true;
            let pivot_row = m.row(pr).into_owned();
            for r in (0..rows).filter(|&r| !row_used[r]) {
                let f = m[(r, pc)] / pivot_row[pc];
                if f != 0.0 {
                    for c in 0..cols {
                        m[(r, c)] -= f * pivot_row[c];
                    }
                }
            }
        }
    }
    let keep: Vec<usize> = (0..cols).filter(|&c| !is_pivot[c]).collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (j, &c) in keep.iter().enumerate() {
        out[(c, j)] = 1.0;
    }
    out
}

fn w2_hat_from_reduced(red: &ReducedOdeSystem, eta: f64) -> Result<DMatrix<f64>> {
    let sol = solve_riccati_future(&red.a_d, &red.b_const, &red.c_d, Some(&red.e_d), eta)?;
    let th = &red.projectors.theta_r;
    Ok(th * sol.w * th.transpose())
}

/// `Ŵ₂ = Θ_r W̃₂ Θ_rᵀ` with `W̃₂` the stabilizing solution of the
/// `E_d`-weighted reduced Riccati equation.
pub fn solve_projected_riccati_sparse(sys: &StokesDaeSystem, eta: f64) -> Result<DMatrix<f64>> {
    require_constant_input(sys)?;
    w2_hat_from_reduced(&reduce_system(sys)?, eta)
}

/// `‖Θ_rᵀ(A₁₁ᵀŴ₂E₁₁ + E₁₁ᵀŴ₂A₁₁ + C₁ᵀC₁ − ηE₁₁ᵀŴ₂B₁B₁ᵀŴ₂E₁₁)Θ_r‖_F`.
pub fn projected_riccati_residual(
    sys: &StokesDaeSystem,
    theta_r: &DMatrix<f64>,
    w2_hat: &DMatrix<f64>,
    eta: f64,
) -> f64 {
    let we = w2_hat * &sys.e11;
    let bt_we = sys.b1.transpose() * &we;
    let inner = sys.a11.transpose() * &we + we.transpose() * &sys.a11 + sys.c1.transpose() * &sys.c1
        - bt_we.transpose() * &bt_we * eta;
    (theta_r.transpose() * inner * theta_r).norm()
}

/// `Z = B₁ᵀ Ŵ_i (E₁₁)^{⊗(i−1)}`, one row at a time.
fn weighted_input_rows(w: &DVector<f64>, i: usize, sys: &StokesDaeSystem) -> DMatrix<f64> {
    let n = sys.e11.nrows();
    let cols = n.pow(i as u32 - 1);
    let y = sys.b1.transpose() * unvec(w, n, cols);
    let et = sys.e11.transpose();
    let factors: Vec<&DMatrix<f64>> = vec![&et; i - 1];
    let mut out = DMatrix::zeros(y.nrows(), cols);
    for r in 0..y.nrows() {
        let row: Vec<f64> = y.row(r).iter().copied().collect();
        let z = kron_apply_unchecked(&factors, &row);
        out.row_mut(r).copy_from(&z.transpose());
    }
    out
}

/// Right-hand side of the order-`k` bordered system,
/// `−𝓛_{k−1}^{E₁₁ᵀ}(Nᵀ)ŵ_{k−1} + (η/4)Σ ij vec((E₁₁^{⊗(i−1)})ᵀŴᵢᵀB₁B₁ᵀŴⱼE₁₁^{⊗(j−1)})`.
///
/// `lower` holds `ŵ₂, …, ŵ_{k−1}`.
pub fn assemble_rhs_b(k: usize, sys: &StokesDaeSystem, lower: &[DVector<f64>], eta: f64) -> Result<DVector<f64>> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("bordered systems start at order 3, got {k}")));
    }
    if lower.len() < k - 2 {
        return Err(Error::InvalidArgument(format!("order {k} needs coefficients up to order {}", k - 1)));
    }
    let n = sys.e11.nrows();
    for (idx, w) in lower.iter().enumerate().take(k - 2) {
        if w.len() != n.pow(idx as u32 + 2) {
            return Err(Error::Dimension(format!("coefficient of order {} has length {}", idx + 2, w.len())));
        }
    }
    let nt = sys.n.transpose();
    let et = sys.e11.transpose();
    let mut b = -build_lk(&nt, Some(&et), k - 1)?.apply(&lower[k - 3])?;
    for i in 3..k {
        let j = k + 2 - i;
        if j < 3 {
            continue;
        }
        let zi = weighted_input_rows(&lower[i - 2], i, sys);
        let zj = weighted_input_rows(&lower[j - 2], j, sys);
        b += vec_of(&(zi.transpose() * zj)) * (eta / 4.0 * (i * j) as f64);
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderedSolve {
    /// Dense LU up to [`DIRECT_MAX_SIDE`], projected Krylov beyond.
    #[default]
    Auto,
    Direct,
    Iterative,
}

/// ```text
/// [ 𝓛ₖ^{E₁₁ᵀ}(A₁₁ᵀ − UVᵀ)   𝓜ₖ^Ĩ(A₁₂) ] [ŵ]   [b]
/// [ 𝓜ₖ^Ĩ(A₁₂)ᵀ               0        ] [Ω] = [0]
/// ```
/// with the closed-loop update kept in factored form,
/// `U = ηE₁₁ᵀŴ₂B₁`, `V = B₁`.
#[derive(Debug, Clone)]
pub struct AugmentedKroneckerSystem {
    pub k: usize,
    pub a11t: DMatrix<f64>,
    pub e11t: DMatrix<f64>,
    pub feedback_u: DMatrix<f64>,
    pub feedback_v: DMatrix<f64>,
    /// `𝓜ₖ^Ĩ(A₁₂)`.
    pub border: BlockKroneckerMatrix,
    pub rhs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct BorderedSolution {
    pub w_hat: DVector<f64>,
    /// Multiplier of the constraint rows; carries no further meaning.
    pub omega: DVector<f64>,
    pub side: usize,
    /// Numerical rank of the bordered matrix (direct solves only).
    pub rank: Option<usize>,
    /// `‖𝓛ŵ + 𝓜Ω − b‖ / max(‖b‖, 1)`.
    pub block_residual: f64,
    /// `‖𝓜ᵀŵ‖`.
    pub constraint_residual: f64,
}

impl AugmentedKroneckerSystem {
    pub fn new(k: usize, sys: &StokesDaeSystem, w2_hat: &DMatrix<f64>, eta: f64, rhs: DVector<f64>) -> Result<Self> {
        require_constant_input(sys)?;
        let n = sys.e11.nrows();
        if k < 2 {
            return Err(Error::InvalidArgument(format!("bordered order must be at least 2, got {k}")));
        }
        if w2_hat.shape() != (n, n) {
            return Err(Error::Dimension(format!("Ŵ₂ must be {n}×{n}")));
        }
        if rhs.len() != n.pow(k as u32) {
            return Err(Error::Dimension(format!("rhs must have length {}, got {}", n.pow(k as u32), rhs.len())));
        }
        let itilde = build_itilde(&sys.a12);
        Ok(AugmentedKroneckerSystem {
            k,
            a11t: sys.a11.transpose(),
            e11t: sys.e11.transpose(),
            feedback_u: sys.e11.transpose() * w2_hat * &sys.b1 * eta,
            feedback_v: sys.b1.clone(),
            border: build_mk(&sys.a12, Some(&itilde), k)?,
            rhs,
        })
    }

    pub fn n(&self) -> usize {
        self.a11t.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.n().pow(self.k as u32)
    }

    pub fn multipliers(&self) -> usize {
        self.border.ncols()
    }

    pub fn side(&self) -> usize {
        self.unknowns() + self.multipliers()
    }

    /// `A₁₁ᵀ − UVᵀ`, assembled.
    pub fn closed_loop_slot(&self) -> DMatrix<f64> {
        &self.a11t - &self.feedback_u * self.feedback_v.transpose()
    }

    /// `𝓛ₖ^{E₁₁ᵀ}(A₁₁ᵀ − UVᵀ) w` from the factors.
    pub fn apply_lk(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let k = self.k;
        let vt = self.feedback_v.transpose();
        let mut out = DVector::zeros(w.len());
        for slot in 0..k {
            let dims = vec![n; k];
            let mut t = mode_product(w.as_slice(), &dims, slot, &self.a11t);
            let mut low_dims = dims.clone();
            low_dims[slot] = vt.nrows();
            let low = mode_product(w.as_slice(), &dims, slot, &vt);
            let low = mode_product(&low, &low_dims, slot, &self.feedback_u);
            for (a, b) in t.iter_mut().zip(&low) {
                *a -= b;
            }
            for other in (0..k).filter(|&j| j != slot) {
                t = mode_product(&t, &dims, other, &self.e11t);
            }
            out += DVector::from_vec(t);
        }
        out
    }

    /// `(𝓛ŵ + 𝓜Ω, 𝓜ᵀŵ)`.
    pub fn apply(&self, w: &DVector<f64>, omega: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if w.len() != self.unknowns() || omega.len() != self.multipliers() {
            return Err(Error::Dimension("bordered operand has the wrong length".into()));
        }
        let top = self.apply_lk(w) + self.border.apply(omega)?;
        Ok((top, self.border.apply_transpose(w)?))
    }

    /// Dense bordered matrix, column-major.
    fn fill_dense(&self) -> DMatrix<f64> {
        let side = self.side();
        let nk = self.unknowns();
        let mut a = DMatrix::zeros(side, side);
        let slot_m = self.closed_loop_slot();
        for slot in 0..self.k {
            let factors: Vec<&DMatrix<f64>> =
                (0..self.k).map(|j| if j == slot { &slot_m } else { &self.e11t }).collect();
            add_kron(&mut a, 0, 0, &factors, false);
        }
        let mut offset = nk;
        for i in 0..self.k {
            let factors = self.border.block_factors(i);
            add_kron(&mut a, 0, offset, &factors, false);
            add_kron(&mut a, offset, 0, &factors, true);
            offset += self.border.block_cols(i);
        }
        a
    }

    pub fn assemble(&self) -> Result<DMatrix<f64>> {
        let side = self.side();
        match side.checked_mul(side) {
            Some(e) if e <= MAX_DENSE_ENTRIES => Ok(self.fill_dense()),
            Some(e) => Err(Error::TooLarge { entries: e }),
            None => Err(Error::TooLarge { entries: usize::MAX }),
        }
    }

    fn residuals(&self, w: &DVector<f64>, omega: &DVector<f64>) -> Result<(f64, f64)> {
        let (top, bottom) = self.apply(w, omega)?;
        Ok(((top - &self.rhs).norm() / self.rhs.norm().max(1.0), bottom.norm()))
    }

    pub fn solve(&self, method: BorderedSolve) -> Result<BorderedSolution> {
        let direct = match method {
            BorderedSolve::Auto => self.side() <= DIRECT_MAX_SIDE,
            BorderedSolve::Direct => true,
            BorderedSolve::Iterative => false,
        };
        if direct {
            self.solve_direct()
        } else {
            self.solve_iterative()
        }
    }

    fn solve_direct(&self) -> Result<BorderedSolution> {
        let side = self.side();
        let nk = self.unknowns();
        let a = self.fill_dense();
        let view = MatRef::from_column_major_slice(a.as_slice(), side, side);
        let lu = view.partial_piv_lu();
        let rank = bordered_rank(&a, &lu);
        if rank < side {
            return Err(Error::SingularBordered { rank, expected: side });
        }
        let mut rhs = DVector::zeros(side);
        rhs.rows_mut(0, nk).copy_from(&self.rhs);
        let mut x = lu_apply(&lu, &rhs);
        // one step of iterative refinement
        let r = &rhs - &a * &x;
        x += lu_apply(&lu, &r);
        let w_hat = x.rows(0, nk).into_owned();
        let omega = x.rows(nk, side - nk).into_owned();
        let (block_residual, constraint_residual) = self.residuals(&w_hat, &omega)?;
        Ok(BorderedSolution { w_hat, omega, side, rank: Some(rank), block_residual, constraint_residual })
    }

    /// Krylov solve on the constraint manifold: `ŵ ∈ range(R^{⊗k})` solves
    /// `R^{⊗k}(𝓛ŵ − b) = 0`, then `Ω` is the least-squares multiplier.
    fn solve_iterative(&self) -> Result<BorderedSolution> {
        let proj = self.constraint_projector()?;
        let b = proj(&self.rhs);
        let op = |v: &DVector<f64>| proj(&self.apply_lk(&proj(v)));
        let w_hat = proj(&gmres(&op, &b)?);
        let r = &self.rhs - self.apply_lk(&w_hat);
        let mt_r = self.border.apply_transpose(&r)?;
        let normal = |v: &DVector<f64>| -> DVector<f64> {
            let mv = self.border.apply(v).expect("multiplier length checked");
            self.border.apply_transpose(&mv).expect("unknown length checked")
        };
        let omega = conjugate_gradient(&normal, &mt_r)?;
        let (block_residual, constraint_residual) = self.residuals(&w_hat, &omega)?;
        Ok(BorderedSolution { w_hat, omega, side: self.side(), rank: None, block_residual, constraint_residual })
    }

    /// `R^{⊗k}` applied slot by slot as `I − A₁₂(A₁₂ᵀA₁₂)⁻¹A₁₂ᵀ`.
    fn constraint_projector(&self) -> Result<impl Fn(&DVector<f64>) -> DVector<f64> + '_> {
        let a12 = &self.border.a;
        let n = self.n();
        let k = self.k;
        let gram = a12.transpose() * a12;
        let ginv_a12t = if a12.ncols() == 0 {
            DMatrix::zeros(0, n)
        } else {
            lu_solve(&gram, &a12.transpose(), "A12ᵀA12")?
        };
        Ok(move |v: &DVector<f64>| {
            let mut data = v.as_slice().to_vec();
            if a12.ncols() == 0 {
                return v.clone();
            }
            let dims = vec![n; k];
            for slot in 0..k {
                let mut low_dims = dims.clone();
                low_dims[slot] = a12.ncols();
                let low = mode_product(&data, &dims, slot, &ginv_a12t);
                let corr = mode_product(&low, &low_dims, slot, a12);
                for (d, c) in data.iter_mut().zip(&corr) {
                    *d -= c;
                }
            }
            DVector::from_vec(data)
        })
    }
}

/// `dst[r0.., c0..] += F₁ ⊗ … ⊗ F_k` (or its transpose).
fn add_kron(dst: &mut DMatrix<f64>, r0: usize, c0: usize, factors: &[&DMatrix<f64>], transpose: bool) {
    let head = factors[0];
    let tail = if factors.len() > 1 {
        kron_chain(&factors[1..])
    } else {
        DMatrix::from_element(1, 1, 1.0)
    };
    let tail = if transpose { tail.transpose() } else { tail };
    let (tr, tc) = tail.shape();
    for i in 0..head.nrows() {
        for j in 0..head.ncols() {
            let v = head[(i, j)];
            if v == 0.0 {
                continue;
            }
            let (bi, bj) = if transpose { (j, i) } else { (i, j) };
            let mut block = dst.view_mut((r0 + bi * tr, c0 + bj * tc), (tr, tc));
            block.zip_apply(&tail, |d, t| *d += v * t);
        }
    }
}

fn lu_apply(lu: &faer::linalg::solvers::PartialPivLu<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let mut x = rhs.clone();
    let n = x.len();
    lu.solve_in_place(faer::MatMut::from_column_major_slice_mut(x.as_mut_slice(), n, 1));
    x
}

fn lu_apply_transpose(lu: &faer::linalg::solvers::PartialPivLu<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let mut x = rhs.clone();
    let n = x.len();
    lu.solve_transpose_in_place(faer::MatMut::from_column_major_slice_mut(x.as_mut_slice(), n, 1));
    x
}

/// Singular values of a square matrix, via faer.
fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let view = MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols());
    view.singular_values().unwrap_or_default()
}

fn rank_from_singular_values(s: &[f64], dim: usize) -> usize {
    let smax = s.iter().copied().fold(0.0, f64::max);
    let tol = dim as f64 * f64::EPSILON * smax;
    s.iter().filter(|v| **v > tol).count()
}

/// Numerical rank of the square bordered matrix `a`.
fn bordered_rank(a: &DMatrix<f64>, lu: &faer::linalg::solvers::PartialPivLu<f64>) -> usize {
    let side = a.nrows();
    if side <= SVD_RANK_MAX_SIDE {
        return rank_from_singular_values(&singular_values(a), side);
    }
    // σ_min by inverse iteration on (AᵀA)⁻¹ against ‖A‖_F ≥ σ_max
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DVector::from_fn(side, |_, _| rng.random_range(-1.0..1.0));
    x /= x.norm();
    let mut growth = 0.0;
    for _ in 0..30 {
        let y = lu_apply(lu, &lu_apply_transpose(lu, &x));
        growth = y.norm();
        if !growth.is_finite() || growth == 0.0 {
            growth = f64::INFINITY;
            break;
        }
        x = y / growth;
    }
    let smin = 1.0 / growth.sqrt();
    if smin > side as f64 * f64::EPSILON * a.norm() {
        side
    } else {
        rank_from_singular_values(&singular_values(a), side)
    }
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
fn gmres(op: &dyn Fn(&DVector<f64>) -> DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = b.len();
    let bnorm = b.norm();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let m = GMRES_RESTART.min(n).max(1);
    let mut iters = 0;
    while iters < GMRES_MAX_ITER {
        let r = b - op(&x);
        let beta = r.norm();
        if beta <= KRYLOV_TOL * bnorm {
            return Ok(x);
        }
        let mut v = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = DVector::zeros(m + 1);
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            iters += 1;
            let mut w = op(&v[j]);
            for i in 0..=j {
                h[(i, j)] = w.dot(&v[i]);
                w.axpy(-h[(i, j)], &v[i], 1.0);
            }
            let wn = w.norm();
            h[(j + 1, j)] = wn;
            for i in 0..j {
                let t = cs[i] * h[(i, j)] + sn[i] * h[(i + 1, j)];
                h[(i + 1, j)] = -sn[i] * h[(i, j)] + cs[i] * h[(i + 1, j)];
                h[(i, j)] = t;
            }
            let denom = h[(j, j)].hypot(h[(j + 1, j)]);
            if denom == 0.0 {
                break;
            }
            cs[j] = h[(j, j)] / denom;
            sn[j] = h[(j + 1, j)] / denom;
            h[(j, j)] = denom;
            h[(j + 1, j)] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= KRYLOV_TOL * bnorm || wn <= f64::EPSILON * beta {
                break;
            }
            v.push(w / wn);
        }
        if used == 0 {
            break;
        }
        let mut y = DVector::zeros(used);
        for i in (0..used).rev() {
            let mut s = g[i];
            for l in i + 1..used {
                s -= h[(i, l)] * y[l];
            }
            y[i] = s / h[(i, i)];
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(*yi, &v[i], 1.0);
        }
    }
    if (b - op(&x)).norm() <= 10.0 * KRYLOV_TOL * bnorm {
        Ok(x)
    } else {
        Err(Error::IterationLimit { method: "projected GMRES", iterations: iters })
    }
}

fn conjugate_gradient(op: &dyn Fn(&DVector<f64>) -> DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(b.len());
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..GMRES_MAX_ITER {
        let ap = op(&p);
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let next = r.dot(&r);
        if next.sqrt() <= KRYLOV_TOL * bnorm {
            return Ok(x);
        }
        p = &r + &p * (next / rr);
        rr = next;
    }
    Err(Error::IterationLimit { method: "multiplier CG", iterations: GMRES_MAX_ITER })
}

/// Lifted coefficients `ŵ₂, …, ŵ_d` (order 2 stored as `vec(Ŵ₂)`).
///
/// These are `E₁₁`-weighted: the reduced coefficients are recovered by
/// [`recover_dense_coeff`], never by reading `ŵ_k` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCoefficientSet {
    pub eta: f64,
    pub n1: usize,
    pub coeffs: Vec<DVector<f64>>,
}

impl ProjectedCoefficientSet {
    pub fn degree(&self) -> usize {
        self.coeffs.len() + 1
    }

    pub fn coeff(&self, k: usize) -> &DVector<f64> {
        &self.coeffs[k - 2]
    }

    pub fn w2_hat(&self) -> DMatrix<f64> {
        unvec(&self.coeffs[0], self.n1, self.n1)
    }

    /// Largest `‖(I ⊗ … ⊗ A₁₂ᵀ ⊗ … ⊗ I)ŵ_k‖` over orders and slots.
    pub fn kernel_residual(&self, a12: &DMatrix<f64>) -> f64 {
        let a12t = a12.transpose();
        let mut worst: f64 = 0.0;
        for (idx, w) in self.coeffs.iter().enumerate() {
            let k = idx + 2;
            let dims = vec![self.n1; k];
            for slot in 0..k {
                let v = mode_product(w.as_slice(), &dims, slot, &a12t);
                worst = worst.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
            }
        }
        worst
    }

    /// Reduced-coordinate energy polynomial in the basis of `projectors`.
    pub fn recover(&self, sys: &StokesDaeSystem, projectors: &ProjectorPair) -> Result<EnergyPolynomial> {
        let n = projectors.theta_r.ncols();
        let vectors = (2..=self.degree())
            .map(|k| recover_dense_coeff(self.coeff(k), k, sys, projectors).map(|w| symmetrize(&w, n, k)))
            .collect::<Result<Vec<_>>>()?;
        EnergyPolynomial::from_vectors(EnergyKind::Future, self.eta, n, vectors)
    }
}

/// `w_k = (Θ_rᵀE₁₁ᵀΠᵀ)^{⊗k} ŵ_k`, one factor at a time.
pub fn recover_dense_coeff(
    w_hat: &DVector<f64>,
    k: usize,
    sys: &StokesDaeSystem,
    projectors: &ProjectorPair,
) -> Result<DVector<f64>> {
    let n1 = sys.e11.nrows();
    if k == 0 || w_hat.len() != n1.pow(k as u32) {
        return Err(Error::Dimension(format!("ŵ of order {k} must have length {}", n1.pow(k as u32))));
    }
    let pit = projectors.pi.transpose();
    let et = sys.e11.transpose();
    let tht = projectors.theta_r.transpose();
    let mut v = kron_apply_unchecked(&vec![&pit; k], w_hat.as_slice());
    v = kron_apply_unchecked(&vec![&et; k], v.as_slice());
    Ok(kron_apply_unchecked(&vec![&tht; k], v.as_slice()))
}

/// Polynomial feedback `u(x₁)` evaluated from the lifted coefficients.
#[derive(Debug, Clone)]
pub struct DirectFeedback {
    /// `−(η/2)B₁ᵀΠᵀ`.
    gain: DMatrix<f64>,
    /// `ΠE₁₁`.
    pi_e: DMatrix<f64>,
    coeffs: Vec<DVector<f64>>,
}

impl DirectFeedback {
    /// Feedback of degree `d` from coefficients of orders `2..=d+1`.
    pub fn new(set: &ProjectedCoefficientSet, sys: &StokesDaeSystem, d: usize) -> Result<Self> {
        if d == 0 || d + 1 > set.degree() {
            return Err(Error::InvalidArgument(format!(
                "feedback degree {d} needs coefficients up to order {}, have {}",
                d + 1,
                set.degree()
            )));
        }
        let pi = build_projector(&sys.e11, &sys.a12)?;
        Ok(DirectFeedback {
            gain: sys.b1.transpose() * pi.transpose() * (-0.5 * set.eta),
            pi_e: pi * &sys.e11,
            coeffs: set.coeffs[..d].to_vec(),
        })
    }

    pub fn eval(&self, x1: &DVector<f64>) -> DVector<f64> {
        let z = &self.pi_e * x1;
        let mut acc = DVector::zeros(z.len());
        for (idx, w) in self.coeffs.iter().enumerate() {
            let i = idx + 2;
            let mut t = w.as_slice().to_vec();
            for _ in 1..i {
                t = contract_last(&t, z.as_slice());
            }
            acc += DVector::from_vec(t) * i as f64;
        }
        &self.gain * acc
    }
}

/// `u = −(η/2)B₁ᵀ Σᵢ₌₂^{d+1} i ΠᵀŴᵢ(ΠE₁₁x₁)^{⊗(i−1)}`.
pub fn direct_feedback_eval(
    set: &ProjectedCoefficientSet,
    sys: &StokesDaeSystem,
    x1: &DVector<f64>,
    d: usize,
) -> Result<DVector<f64>> {
    Ok(DirectFeedback::new(set, sys, d)?.eval(x1))
}

#[derive(Debug, Clone)]
pub struct MonolithicOptions {
    pub solver: BorderedSolve,
}

impl Default for MonolithicOptions {
    fn default() -> Self {
        MonolithicOptions { solver: BorderedSolve::Auto }
    }
}

#[derive(Debug, Clone)]
pub struct MonolithicRun {
    pub set: ProjectedCoefficientSet,
    /// Reduced-coordinate energy recovered from `set`.
    pub energy: EnergyPolynomial,
    pub projectors: ProjectorPair,
    /// One entry per bordered solve, orders `3..=d`.
    pub solves: Vec<BorderedSolution>,
    pub riccati_residual: f64,
}

/// Future energy of degree `d` by the monolithic route.
pub fn monolithic_future_energy(
    sys: &StokesDaeSystem,
    eta: f64,
    d: usize,
    options: &MonolithicOptions,
) -> Result<MonolithicRun> {
    require_constant_input(sys)?;
    if d < 2 {
        return Err(Error::InvalidArgument(format!("energy degree must be at least 2, got {d}")));
    }
    let red = reduce_system(sys)?;
    let n1 = sys.e11.nrows();
    let w2_hat = w2_hat_from_reduced(&red, eta)?;
    let riccati_residual = projected_riccati_residual(sys, &red.projectors.theta_r, &w2_hat, eta);
    let mut coeffs = vec![vec_of(&w2_hat)];
    let mut solves = Vec::new();
    for k in 3..=d {
        let b = symmetrize(&assemble_rhs_b(k, sys, &coeffs, eta)?, n1, k);
        let aug = AugmentedKroneckerSystem::new(k, sys, &w2_hat, eta, b)?;
        let sol = aug.solve(options.solver)?;
        coeffs.push(symmetrize(&sol.w_hat, n1, k));
        solves.push(sol);
    }
    let set = ProjectedCoefficientSet { eta, n1, coeffs };
    let energy = set.recover(sys, &red.projectors)?;
    Ok(MonolithicRun { set, energy, projectors: red.projectors, solves, riccati_residual })
}

/// `r₂ Σᵢ n₁^{k−i}(n₁−r₂)^{i−1}` and `n₁^k − (n₁−r₂)^k`.
pub fn rank_sum_identity(n1: usize, r2: usize, k: usize) -> (usize, usize) {
    let lhs = r2 * (1..=k).map(|i| n1.pow((k - i) as u32) * (n1 - r2).pow(i as u32 - 1)).sum::<usize>();
    (lhs, n1.pow(k as u32) - (n1 - r2).pow(k as u32))
}

#[derive(Debug, Clone)]
pub struct RankIdentityReport {
    pub n1: usize,
    pub n2: usize,
    pub k: usize,
    pub rank_a12: usize,
    /// `n₁^k − (n₁−r₂)^k`.
    pub expected_rank: usize,
    pub rank_full: usize,
    pub rank_tilde: usize,
    /// Columns of `𝓜ₖ^Ĩ(A₁₂)`.
    pub tilde_cols: usize,
    pub sum_identity: (usize, usize),
    /// `‖P_{Ẑ₁}⋯P_{Ẑₖ} − R^{⊗k}‖_F`.
    pub projector_product_error: f64,
}

impl RankIdentityReport {
    pub fn holds(&self) -> bool {
        self.rank_full == self.expected_rank
            && self.rank_tilde == self.expected_rank
            && self.tilde_cols == self.expected_rank
            && self.sum_identity.0 == self.sum_identity.1
            && self.projector_product_error <= 1e-10
    }
}

fn matrix_rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let s = a.singular_values();
    rank_from_singular_values(s.as_slice(), a.nrows().max(a.ncols()))
}

fn orth_complement_projector(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    if z.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = z.clone().svd(true, false);
    let tol = n.max(z.ncols()) as f64 * f64::EPSILON * svd.singular_values.max();
    let u = svd.u.expect("left singular vectors requested");
    let mut p = DMatrix::identity(n, n);
    for (j, s) in svd.singular_values.iter().enumerate() {
        if *s > tol {
            let c = u.column(j);
            p -= &c * c.transpose();
        }
    }
    p
}

/// Rank and projector identities of the block Kronecker matrices on a
/// random `A₁₂ ∈ ℝ^{n₁×n₂}`.
pub fn rank_identities_check(n1: usize, n2: usize, k: usize, seed: u64) -> Result<RankIdentityReport> {
    if k == 0 || n2 == 0 || n2 >= n1 {
        return Err(Error::InvalidArgument(format!("need k ≥ 1 and 0 < n₂ < n₁, got n₁={n1}, n₂={n2}, k={k}")));
    }
    let rows = n1.pow(k as u32);
    match rows.checked_mul(rows) {
        Some(e) if e <= MAX_DENSE_ENTRIES => {}
        _ => return Err(Error::TooLarge { entries: rows.saturating_mul(rows) }),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a12 = DMatrix::from_fn(n1, n2, |_, _| rng.random_range(-1.0..1.0));
    let rank_a12 = matrix_rank(&a12);
    let (r, _) = build_orthogonal_r(&a12)?;
    let itilde = build_itilde(&a12);
    let full = build_mk(&a12, None, k)?.assemble()?;
    let tilde = build_mk(&a12, Some(&itilde), k)?.assemble()?;
    let with_r = build_mk(&a12, Some(&r), k)?;
    let mut product = DMatrix::identity(rows, rows);
    for i in 0..k {
        product *= orth_complement_projector(&kron_chain(&with_r.block_factors(i)));
    }
    let r_power = kron_chain(&vec![&r; k]);
    Ok(RankIdentityReport {
        n1,
        n2,
        k,
        rank_a12,
        expected_rank: rows - (n1 - rank_a12).pow(k as u32),
        rank_full: matrix_rank(&full),
        rank_tilde: matrix_rank(&tilde),
        tilde_cols: tilde.ncols(),
        sum_identity: rank_sum_identity(n1, rank_a12, k),
        projector_product_error: (product - r_power).norm(),
    })
}
