//! Solver for `𝓛ₖ^{Eᵀ}(Fᵀ) w = r`.
//!
//! Uses `𝓛ₖ^{Eᵀ}(Fᵀ) = (Eᵀ)^{⊗k} 𝓛ₖ(M)` with `M = E⁻ᵀFᵀ`, then the real
//! Schur form `M = Q T Qᵀ`, which turns the system into
//! `𝓛ₖ(T) z = (Qᵀ)^{⊗k} (E⁻ᵀ)^{⊗k} r`. That triangular Kronecker sum is
//! solved by peeling off one mode at a time and back-substituting over the
//! diagonal blocks of `T`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::kron::{build_lk, kron_apply_unchecked};
use crate::{Error, Result};

const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITER: usize = 10_000;
const SINGULAR_REL: f64 = 1e-12;
const MAX_MULTISETS: usize = 2_000_000;

/// Cached factorization of the pencil `(F, E)`, reusable for every order `k`.
#[derive(Debug, Clone)]
pub struct KwaySolver {
    f: DMatrix<f64>,
    e: Option<DMatrix<f64>>,
    e_inv_t: Option<DMatrix<f64>>,
    q: DMatrix<f64>,
    qt: DMatrix<f64>,
    t: DMatrix<f64>,
    /// Diagonal blocks of `T` as half-open index ranges.
    blocks: Vec<(usize, usize)>,
    eigenvalues: Vec<Complex<f64>>,
}

impl KwaySolver {
    pub fn new(f: &DMatrix<f64>, e: Option<&DMatrix<f64>>) -> Result<Self> {
        let n = f.nrows();
        if n == 0 || f.ncols() != n {
            return Err(Error::Dimension(format!("F must be square and nonempty, got {}×{}", n, f.ncols())));
        }
        let (m, e_inv_t) = match e {
            Some(e) => {
                if e.shape() != (n, n) {
                    return Err(Error::Dimension(format!("E must be {n}×{n}, got {}×{}", e.nrows(), e.ncols())));
                }
                let lu = e.transpose().lu();
                let inv = lu
                    .solve(&DMatrix::identity(n, n))
                    .ok_or_else(|| Error::Singular("E is singular".into()))?;
                (&inv * f.transpose(), Some(inv))
            }
            None => (f.transpose(), None),
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("pencil contains non-finite entries".into()));
        }
        let schur = m
            .clone()
            .try_schur(SCHUR_EPS, SCHUR_MAX_ITER)
            .ok_or(Error::IterationLimit { method: "real Schur", iterations: SCHUR_MAX_ITER })?;
        let (q, t) = schur.unpack();
        let blocks = diagonal_blocks(&t);
        let eigenvalues = block_eigenvalues(&t, &blocks);
        Ok(KwaySolver {
            f: f.clone(),
            e: e.cloned(),
            e_inv_t,
            qt: q.transpose(),
            q,
            t,
            blocks,
            eigenvalues,
        })
    }

    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    /// Eigenvalues of `E⁻ᵀFᵀ` (equivalently of the pencil `(F, E)`).
    pub fn eigenvalues(&self) -> &[Complex<f64>] {
        &self.eigenvalues
    }

    /// Smallest `|λ_{i₁} + … + λ_{i_k}|` over all multisets of size `k`,
    /// together with the spectral scale `k·max|λ|`. `None` when the
    /// enumeration would be too large.
    pub fn min_eigen_sum(&self, k: usize) -> Option<(f64, f64)> {
        let n = self.eigenvalues.len();
        if multiset_count(n, k)? > MAX_MULTISETS {
            return None;
        }
        let scale = k as f64 * self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let mut best = f64::INFINITY;
        min_sum_rec(&self.eigenvalues, k, 0, Complex::new(0.0, 0.0), &mut best);
        Some((best, scale))
    }

    fn check_conditioning(&self, k: usize) -> Result<()> {
        if let Some((min_sum, scale)) = self.min_eigen_sum(k) {
            if scale == 0.0 || min_sum < SINGULAR_REL * scale {
                return Err(Error::IllConditioned { min_sum, scale });
            }
        }
        Ok(())
    }

    /// Solves `𝓛ₖ^{Eᵀ}(Fᵀ) w = rhs`.
    pub fn solve(&self, k: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if k == 0 {
            return Err(Error::InvalidArgument("order k must be at least 1".into()));
        }
        let n = self.n();
        let len = n
            .checked_pow(k as u32)
            .ok_or(Error::TooLarge { entries: usize::MAX })?;
        if rhs.len() != len {
            return Err(Error::Dimension(format!("rhs has length {}, expected {n}^{k} = {len}", rhs.len())));
        }
        self.check_conditioning(k)?;
        if rhs.iter().all(|v| *v == 0.0) {
            return Ok(DVector::zeros(len));
        }
        let mut w = self.solve_once(k, rhs)?;
        // one step of iterative refinement against the original operator
        let op = build_lk(&self.f.transpose(), self.e.as_ref().map(|e| e.transpose()).as_ref(), k)?;
        let resid = rhs - op.apply(&w)?;
        if resid.norm() > 0.0 {
            w += self.solve_once(k, &resid)?;
        }
        Ok(w)
    }

    fn solve_once(&self, k: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let mut r = match &self.e_inv_t {
            Some(inv) => kron_apply_unchecked(&vec![inv; k], rhs.as_slice()),
            None => rhs.clone(),
        };
        r = kron_apply_unchecked(&vec![&self.qt; k], r.as_slice());
        let scale = self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        self.solve_scalar(0.0, k, r.as_mut_slice(), scale)?;
        Ok(kron_apply_unchecked(&vec![&self.q; k], r.as_slice()))
    }

    /// `(σ I + 𝓛_m(T)) z = r` in place, `r.len() = n^m`.
    fn solve_scalar(&self, sigma: f64, m: usize, r: &mut [f64], scale: f64) -> Result<()> {
        if m == 0 {
            if sigma.abs() < SINGULAR_REL * scale {
                return Err(Error::IllConditioned { min_sum: sigma.abs(), scale });
            }
            r[0] /= sigma;
            return Ok(());
        }
        let n = self.n();
        let len = r.len() / n;
        for &(start, end) in self.blocks.iter().rev() {
            self.subtract_coupling(r, 1, len, start, end);
            if end - start == 1 {
                self.solve_scalar(sigma + self.t[(start, start)], m - 1, &mut r[start * len..end * len], scale)?;
            } else {
                let b = end - start;
                let shift = self.t.view((start, start), (b, b)) + DMatrix::identity(b, b) * sigma;
                self.solve_general(&shift, m - 1, &mut r[start * len..end * len], scale)?;
            }
        }
        Ok(())
    }

    /// `(S ⊗ I + I_s ⊗ 𝓛_m(T)) z = r` in place, `r.len() = s·n^m`.
    fn solve_general(&self, s: &DMatrix<f64>, m: usize, r: &mut [f64], scale: f64) -> Result<()> {
        let sdim = s.nrows();
        if m == 0 {
            let rhs = DVector::from_column_slice(r);
            let lu = s.clone().lu();
            let z = lu.solve(&rhs).filter(|z| z.iter().all(|v| v.is_finite())).ok_or_else(|| {
                Error::IllConditioned { min_sum: s.determinant().abs(), scale }
            })?;
            r.copy_from_slice(z.as_slice());
            return Ok(());
        }
        let n = self.n();
        let len = r.len() / (sdim * n);
        for &(start, end) in self.blocks.iter().rev() {
            self.subtract_coupling(r, sdim, len, start, end);
            let b = end - start;
            let mut buf = Vec::with_capacity(sdim * b * len);
            for a in 0..sdim {
                buf.extend_from_slice(&r[(a * n + start) * len..(a * n + end) * len]);
            }
            let tjj = self.t.view((start, start), (b, b)).into_owned();
            let shift = s.kronecker(&DMatrix::identity(b, b)) + DMatrix::identity(sdim, sdim).kronecker(&tjj);
            self.solve_general(&shift, m - 1, &mut buf, scale)?;
            for a in 0..sdim {
                r[(a * n + start) * len..(a * n + end) * len].copy_from_slice(&buf[a * b * len..(a + 1) * b * len]);
            }
        }
        Ok(())
    }

    /// `r[a, i, :] -= Σ_{j ≥ end} T[i, j] r[a, j, :]` for `i ∈ [start, end)`.
    fn subtract_coupling(&self, r: &mut [f64], sdim: usize, len: usize, start: usize, end: usize) {
        let n = self.n();
        for a in 0..sdim {
            let chunk = &mut r[a * n * len..(a + 1) * n * len];
            let (head, tail) = chunk.split_at_mut(end * len);
            for i in start..end {
                let dst = &mut head[i * len..(i + 1) * len];
                for j in end..n {
                    let c = self.t[(i, j)];
                    if c == 0.0 {
                        continue;
                    }
                    let src = &tail[(j - end) * len..(j - end + 1) * len];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d -= c * s;
                    }
                }
            }
        }
    }
}

/// Solves `𝓛ₖ^{Eᵀ}(Fᵀ) w = rhs` (`E = I` when omitted).
pub fn solve_kway(f: &DMatrix<f64>, e: Option<&DMatrix<f64>>, k: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    KwaySolver::new(f, e)?.solve(k, rhs)
}

fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let tol = 1e-14 * t.norm().max(f64::MIN_POSITIVE);
    let mut blocks = Vec::new();
    let mut start = 0;
    for i in 0..n {
        if i + 1 == n || t[(i + 1, i)].abs() <= tol {
            blocks.push((start, i + 1));
            start = i + 1;
        }
    }
    blocks
}

fn block_eigenvalues(t: &DMatrix<f64>, blocks: &[(usize, usize)]) -> Vec<Complex<f64>> {
    let mut out = Vec::with_capacity(t.nrows());
    for &(s, e) in blocks {
        if e - s == 1 {
            out.push(Complex::new(t[(s, s)], 0.0));
        } else {
            let blk = t.view((s, s), (e - s, e - s)).into_owned();
            out.extend(blk.complex_eigenvalues().iter().copied());
        }
    }
    out
}

fn multiset_count(n: usize, k: usize) -> Option<usize> {
    // C(n + k - 1, k)
    let mut c: usize = 1;
    for i in 0..k {
        c = c.checked_mul(n + i)? / (i + 1);
    }
    Some(c)
}

fn min_sum_rec(eig: &[Complex<f64>], k: usize, from: usize, acc: Complex<f64>, best: &mut f64) {
    if k == 0 {
        *best = best.min(acc.norm());
        return;
    }
    for i in from..eig.len() {
        min_sum_rec(eig, k - 1, i, acc + eig[i], best);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::vec_of;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stable(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::MIN, f64::max);
        a - DMatrix::identity(n, n) * (shift + 0.5)
    }

    #[test]
    fn scalar_order_three() {
        let f = DMatrix::from_element(1, 1, -0.7);
        let e = DMatrix::from_element(1, 1, 1.3);
        let w = solve_kway(&f, Some(&e), 3, &DVector::from_element(1, 2.0)).unwrap();
        assert_relative_eq!(w[0], 2.0 / (3.0 * -0.7 * 1.3 * 1.3), epsilon = 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let f = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let w = solve_kway(&f, None, 3, &DVector::zeros(8)).unwrap();
        assert!(w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_assembled_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=4 {
            for k in 1..=3 {
                let f = random_stable(n, &mut rng);
                let e = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.2..0.2));
                let len = n.pow(k as u32);
                let rhs = DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0));
                let w = solve_kway(&f, Some(&e), k, &rhs).unwrap();
                let op = build_lk(&f.transpose(), Some(&e.transpose()), k).unwrap().assemble().unwrap();
                let dense = op.lu().solve(&rhs).unwrap();
                assert_relative_eq!(w, dense, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn complex_spectrum_and_residual() {
        // rotation-dominated matrix gives 2×2 Schur blocks
        let f = DMatrix::from_row_slice(3, 3, &[-0.5, 2.0, 0.1, -2.0, -0.5, 0.3, 0.0, 0.0, -1.0]);
        let solver = KwaySolver::new(&f, None).unwrap();
        assert!(solver.eigenvalues().iter().any(|l| l.im.abs() > 1.0));
        for k in 2..=5 {
            let rhs = DVector::from_fn(3usize.pow(k as u32), |i, _| (i as f64 * 0.7).sin());
            let w = solver.solve(k, &rhs).unwrap();
            let op = build_lk(&f.transpose(), None, k).unwrap();
            let res = (op.apply(&w).unwrap() - &rhs).norm();
            assert!(res <= 1e-9 * rhs.norm(), "k={k} residual {res}");
        }
    }

    #[test]
    fn order_two_is_lyapunov() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.2, -0.8]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = vec_of(&(crate::linalg::solve_lyapunov(&a, &q).unwrap()));
        let w = solve_kway(&a, None, 2, &(-vec_of(&q))).unwrap();
        assert_relative_eq!(x, w, epsilon = 1e-10);
    }

    #[test]
    fn resonant_spectrum_is_rejected() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        // 1 + 1 + (-2) = 0
        let err = solve_kway(&f, None, 3, &DVector::from_element(8, 1.0)).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }
}
