//! Truncated multivariate polynomial series in Kronecker form.
//!
//! A vector-valued polynomial `p(x) = Σⱼ Pⱼ x^{⊗j}` is stored as the list of
//! coefficient matrices `Pⱼ ∈ ℝ^{q × n^j}`. Column order inside a `Pⱼ` is
//! irrelevant for the polynomial it represents, which is what makes the
//! products below (plain Kronecker products of coefficient rows) valid.

use nalgebra::{DMatrix, DVector};

use crate::energy::QuadraticOde;
use crate::kron::{kron_vec, unvec};

#[derive(Debug, Clone, PartialEq)]
pub struct PolySeries {
    pub n: usize,
    pub rows: usize,
    /// `terms[j]` is `rows × n^j`.
    pub terms: Vec<DMatrix<f64>>,
}

impl PolySeries {
    pub fn zeros(n: usize, rows: usize, max_degree: usize) -> Self {
        PolySeries {
            n,
            rows,
            terms: (0..=max_degree).map(|j| DMatrix::zeros(rows, n.pow(j as u32))).collect(),
        }
    }

    pub fn max_degree(&self) -> usize {
        self.terms.len().saturating_sub(1)
    }

    pub fn term(&self, j: usize) -> Option<&DMatrix<f64>> {
        self.terms.get(j)
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        let mut power = DVector::from_element(1, 1.0);
        for (j, t) in self.terms.iter().enumerate() {
            if j > 0 {
                power = kron_vec(&power, x);
            }
            if t.iter().any(|v| *v != 0.0) {
                out += t * &power;
            }
        }
        out
    }

    /// `d/dε p(x + εv)` at `ε = 0`.
    pub fn directional_derivative(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        // powers[j] = x^{⊗j}
        let mut powers = vec![DVector::from_element(1, 1.0)];
        for j in 1..self.terms.len() {
            powers.push(kron_vec(&powers[j - 1], x));
        }
        for (j, t) in self.terms.iter().enumerate().skip(1) {
            if t.iter().all(|c| *c == 0.0) {
                continue;
            }
            for slot in 0..j {
                let left = kron_vec(&powers[slot], v);
                out += t * kron_vec(&left, &powers[j - slot - 1]);
            }
        }
        out
    }
}

pub(crate) fn kron_rows(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|y| x * y));
    }
    out
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn add_row(target: &mut [f64], src: &[f64], scale: f64) {
    for (t, s) in target.iter_mut().zip(src) {
        *t += scale * s;
    }
}

/// Gradient series `∇V(x) = Σⱼ ½(j+1) W_{j+1} x^{⊗j}` of
/// `V(x) = ½ Σₖ wₖᵀ x^{⊗k}` with symmetric `wₖ` (`coeffs[0]` is order 2).
pub fn costate_series(coeffs: &[DVector<f64>], n: usize) -> PolySeries {
    let mut p = PolySeries::zeros(n, n, coeffs.len());
    for (idx, w) in coeffs.iter().enumerate() {
        let k = idx + 2;
        let j = k - 1;
        p.terms[j] = unvec(w, n, n.pow(j as u32)) * (0.5 * k as f64);
    }
    p
}

/// Coefficient rows (degree `j+1`) of `(G(x)ᵀ p)_c = pᵀ K_c x`, where
/// `K_c` collects the columns of `G_ℓ`, `G_r` belonging to input `c`.
fn input_coupling_blocks(ode: &QuadraticOde) -> Vec<DMatrix<f64>> {
    let n = ode.a.nrows();
    let m = ode.b.ncols();
    (0..m)
        .map(|c| {
            DMatrix::from_fn(n, n, |r, i| ode.g_left[(r, i * m + c)] + ode.g_right[(r, c * n + i)])
        })
        .collect()
}

/// Power series of the minimizer of
/// `pᵀ((B + G(x))u + S(u⊗u)) + |u|²/(2η)` for `p = p(x)`, up to `max_degree`.
///
/// Stationarity reads `u = −η((B + G(x))ᵀp + (σ + σᵀ)u)` with
/// `σ_ab = pᵀ S[:, a·m + b]`; matching degrees gives each term of `u`
/// from the lower ones.
pub fn feedback_series(ode: &QuadraticOde, p: &PolySeries, eta: f64, max_degree: usize) -> PolySeries {
    let n = p.n;
    let m = ode.b.ncols();
    let mut u = PolySeries::zeros(n, m, max_degree);
    if eta == 0.0 || m == 0 {
        return u;
    }
    let blocks = input_coupling_blocks(ode);
    let coupled = blocks.iter().any(|k| k.iter().any(|v| *v != 0.0));
    let quadratic_input = ode.s_quad.iter().any(|v| *v != 0.0);
    // Σ̃ coefficients per degree a: row (c·m + b) holds Σ̃_cb
    let sigma_t: Vec<Option<DMatrix<f64>>> = (0..=max_degree)
        .map(|a| {
            if a == 0 || !quadratic_input {
                return None;
            }
            let pa = p.term(a)?;
            let mut s = DMatrix::zeros(m * m, pa.ncols());
            for c in 0..m {
                for b in 0..m {
                    let r1 = ode.s_quad.column(c * m + b).transpose() * pa;
                    let r2 = ode.s_quad.column(b * m + c).transpose() * pa;
                    s.row_mut(c * m + b).copy_from(&(r1 + r2));
                }
            }
            Some(s)
        })
        .collect();
    for j in 1..=max_degree {
        let mut acc = DMatrix::zeros(m, n.pow(j as u32));
        if let Some(pj) = p.term(j) {
            acc += ode.b.transpose() * pj;
        }
        if coupled && j >= 2 {
            if let Some(pj1) = p.term(j - 1) {
                for (c, kc) in blocks.iter().enumerate() {
                    // vec(P_{j-1}ᵀ K_c) as a row
                    let r: Vec<f64> = (pj1.transpose() * kc).iter().copied().collect();
                    let mut rowv = acc.row_mut(c);
                    for (t, s) in rowv.iter_mut().zip(&r) {
                        *t += s;
                    }
                }
            }
        }
        for a in 1..j {
            let Some(Some(st)) = sigma_t.get(a) else { continue };
            let ul = &u.terms[j - a];
            for c in 0..m {
                let mut r = vec![0.0; n.pow(j as u32)];
                for b in 0..m {
                    add_row(&mut r, &kron_rows(&row(st, c * m + b), &row(ul, b)), 1.0);
                }
                let mut rowv = acc.row_mut(c);
                for (t, s) in rowv.iter_mut().zip(&r) {
                    *t += s;
                }
            }
        }
        u.terms[j] = acc * (-eta);
    }
    u
}

/// Degree-`k` coefficient row of
/// `h(x) = pᵀ(Ax + N(x⊗x) + (B + G(x))u + S(u⊗u)) + ½|Cx|² + |u|²/(2η)`.
pub fn hamiltonian_term(ode: &QuadraticOde, p: &PolySeries, u: &PolySeries, eta: f64, k: usize) -> DVector<f64> {
    let n = p.n;
    let m = ode.b.ncols();
    let len = n.pow(k as u32);
    let mut r = vec![0.0; len];
    let vec_row = |mat: DMatrix<f64>| -> Vec<f64> { mat.iter().copied().collect() };
    if k >= 2 {
        if let Some(pj) = p.term(k - 1) {
            add_row(&mut r, &vec_row(pj.transpose() * &ode.a), 1.0);
        }
    }
    if k >= 3 {
        if let Some(pj) = p.term(k - 2) {
            add_row(&mut r, &vec_row(pj.transpose() * &ode.n_quad), 1.0);
        }
    }
    if k == 2 {
        add_row(&mut r, &vec_row(ode.c.transpose() * &ode.c), 0.5);
    }
    if m > 0 && eta != 0.0 {
        for j in 1..k {
            let l = k - j;
            if let (Some(pj), Some(ul)) = (p.term(j), u.term(l)) {
                add_row(&mut r, &vec_row(pj.transpose() * &ode.b * ul), 1.0);
            }
        }
        let blocks = input_coupling_blocks(ode);
        if blocks.iter().any(|b| b.iter().any(|v| *v != 0.0)) {
            for a in 2..k {
                let (Some(pj), Some(ul)) = (p.term(a - 1), u.term(k - a)) else { continue };
                for (c, kc) in blocks.iter().enumerate() {
                    let g = vec_row(pj.transpose() * kc);
                    add_row(&mut r, &kron_rows(&g, &row(ul, c)), 1.0);
                }
            }
        }
        if ode.s_quad.iter().any(|v| *v != 0.0) {
            for a in 1..k {
                let Some(pa) = p.term(a) else { continue };
                for l1 in 1..k - a {
                    let l2 = k - a - l1;
                    let (Some(u1), Some(u2)) = (u.term(l1), u.term(l2)) else { continue };
                    for c in 0..m {
                        for b in 0..m {
                            let sigma: Vec<f64> = (ode.s_quad.column(c * m + b).transpose() * pa).iter().copied().collect();
                            let t = kron_rows(&kron_rows(&sigma, &row(u1, c)), &row(u2, b));
                            add_row(&mut r, &t, 1.0);
                        }
                    }
                }
            }
        }
        for l1 in 1..k {
            let (Some(u1), Some(u2)) = (u.term(l1), u.term(k - l1)) else { continue };
            for c in 0..m {
                add_row(&mut r, &kron_rows(&row(u1, c), &row(u2, c)), 0.5 / eta);
            }
        }
    }
    DVector::from_vec(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::kron_power_vec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ode(n: usize, m: usize, rng: &mut ChaCha8Rng) -> QuadraticOde {
        let mut r = |a: usize, b: usize| DMatrix::from_fn(a, b, |_, _| rng.random_range(-0.5..0.5));
        QuadraticOde {
            a: r(n, n),
            n_quad: r(n, n * n),
            b: r(n, m),
            g_left: r(n, n * m),
            g_right: r(n, m * n),
            s_quad: r(n, m * m),
            c: r(1, n),
        }
    }

    #[test]
    fn series_eval_and_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = PolySeries::zeros(2, 2, 3);
        for t in s.terms.iter_mut() {
            *t = DMatrix::from_fn(t.nrows(), t.ncols(), |_, _| rng.random_range(-1.0..1.0));
        }
        let x = DVector::from_column_slice(&[0.3, -0.7]);
        let v = DVector::from_column_slice(&[1.0, 0.5]);
        let h = 1e-6;
        let fd = (s.eval(&(&x + &v * h)) - s.eval(&(&x - &v * h))) / (2.0 * h);
        assert_relative_eq!(s.directional_derivative(&x, &v), fd, epsilon = 1e-8);
    }

    /// The truncated feedback solves the stationarity condition up to its
    /// truncation degree.
    #[test]
    fn feedback_series_satisfies_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, m) = (2, 2);
        let ode = random_ode(n, m, &mut rng);
        let coeffs: Vec<DVector<f64>> = (2..=5)
            .map(|k| crate::kron::symmetrize(&DVector::from_fn(n.pow(k), |_, _| rng.random_range(-1.0..1.0)), n, k as usize))
            .collect();
        let p = costate_series(&coeffs, n);
        let eta = 0.7;
        let u = feedback_series(&ode, &p, eta, 4);
        let dir = DVector::from_column_slice(&[0.6, -0.8]);
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-2] {
            let x = &dir * eps;
            let ux = u.eval(&x);
            let px = p.eval(&x);
            let bg = crate::reduction::input_matrix(&ode.b, &ode.g_left, &ode.g_right, &x);
            let sigma = DMatrix::from_fn(m, m, |c, b| px.dot(&ode.s_quad.column(c * m + b)));
            let station = bg.transpose() * &px + (&sigma + sigma.transpose()) * &ux + &ux / eta;
            let ratio = station.norm() / eps.powi(5);
            assert!(ratio < 10.0 * prev.min(1e3), "ratio {ratio}");
            prev = ratio;
        }
    }

    #[test]
    fn hamiltonian_terms_reassemble_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, m) = (2, 1);
        let ode = random_ode(n, m, &mut rng);
        let coeffs: Vec<DVector<f64>> = (2..=3)
            .map(|k| crate::kron::symmetrize(&DVector::from_fn(n.pow(k), |_, _| rng.random_range(-1.0..1.0)), n, k as usize))
            .collect();
        let p = costate_series(&coeffs, n);
        let eta = 2.0;
        let u = feedback_series(&ode, &p, eta, 2);
        let x = DVector::from_column_slice(&[0.2, 0.1]);
        // full Hamiltonian with the truncated series, evaluated directly
        let px = p.eval(&x);
        let ux = u.eval(&x);
        let f = &ode.a * &x + &ode.n_quad * kron_vec(&x, &x)
            + crate::reduction::input_matrix(&ode.b, &ode.g_left, &ode.g_right, &x) * &ux
            + &ode.s_quad * kron_vec(&ux, &ux);
        let direct = px.dot(&f) + 0.5 * (&ode.c * &x).norm_squared() + ux.norm_squared() / (2.0 * eta);
        let total_degree = 2 * 2 + 1 + 2; // highest degree present in the products
        let summed: f64 = (2..=total_degree)
            .map(|k| hamiltonian_term(&ode, &p, &u, eta, k).dot(&kron_power_vec(&x, k)))
            .sum();
        assert_relative_eq!(direct, summed, epsilon = 1e-13);
    }
}
