//! Polynomial energy functions `E(x) = ½ Σₖ wₖᵀ x^{⊗k}` of quadratic
//! control systems.
//!
//! Future energies solve
//! `0 = min_u [∇E·f(x,u) + ½|Cx|² + |u|²/(2η)]`, past energies solve
//! `0 = ∇E·f(x) + ½∇E BBᵀ∇Eᵀ − (η/2)|Cx|²`. The order-2 coefficient comes
//! from a Riccati equation, each higher order from a k-way Lyapunov system
//! with the closed-loop matrix.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kron::{build_lk, contract_full, kron_vec, symmetrize, unvec, vec_of, SymmetricCoefficient};
use crate::linalg::{solve_riccati_future, solve_riccati_past, KwaySolver};
use crate::reduction::{input_matrix, ReducedOdeSystem};
use crate::series::{costate_series, feedback_series, hamiltonian_term};
use crate::{Error, Result};

/// `ẋ = Ax + N(x⊗x) + Bu + G_ℓ(x⊗u) + G_r(u⊗x) + S(u⊗u)`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticOde {
    pub a: DMatrix<f64>,
    pub n_quad: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g_left: DMatrix<f64>,
    pub g_right: DMatrix<f64>,
    pub s_quad: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl QuadraticOde {
    /// A system without input coupling (`G = 0`, `S = 0`).
    pub fn new(a: DMatrix<f64>, n_quad: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || n_quad.shape() != (n, n * n) || b.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension("inconsistent quadratic system dimensions".into()));
        }
        Ok(QuadraticOde {
            a,
            n_quad,
            b,
            g_left: DMatrix::zeros(n, n * m),
            g_right: DMatrix::zeros(n, m * n),
            s_quad: DMatrix::zeros(n, m * m),
            c,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn has_input_coupling(&self) -> bool {
        self.g_left.iter().chain(self.g_right.iter()).chain(self.s_quad.iter()).any(|v| *v != 0.0)
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        input_matrix(&self.b, &self.g_left, &self.g_right, x)
    }

    pub fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.a * x + &self.n_quad * kron_vec(x, x);
        if u.len() > 0 {
            f += self.input_matrix(x) * u + &self.s_quad * kron_vec(u, u);
        }
        f
    }

    /// Minimizer of `pᵀ((B + G(x))u + S(u⊗u)) + |u|²/(2η)`.
    pub fn optimal_input(&self, x: &DVector<f64>, p: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        let m = self.inputs();
        if eta == 0.0 {
            return Ok(DVector::zeros(m));
        }
        let rhs = -(self.input_matrix(x).transpose() * p) * eta;
        let sigma = DMatrix::from_fn(m, m, |a, b| p.dot(&self.s_quad.column(a * m + b)));
        let lhs = DMatrix::identity(m, m) + (&sigma + sigma.transpose()) * eta;
        lhs.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("stationarity system for the optimal input".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnergyKind {
    Past,
    Future,
}

impl fmt::Display for EnergyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnergyKind::Past => "past",
            EnergyKind::Future => "future",
        })
    }
}

impl std::str::FromStr for EnergyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "past" => Ok(EnergyKind::Past),
            "future" => Ok(EnergyKind::Future),
            other => Err(Error::InvalidArgument(format!("unknown energy kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyPolynomial {
    pub kind: EnergyKind,
    pub eta: f64,
    /// Highest order `d`.
    pub degree: usize,
    pub n: usize,
    /// Orders `2..=d`.
    pub coeffs: Vec<SymmetricCoefficient>,
}

impl EnergyPolynomial {
    pub fn from_vectors(kind: EnergyKind, eta: f64, n: usize, vectors: Vec<DVector<f64>>) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(vectors.len());
        for (i, v) in vectors.into_iter().enumerate() {
            let k = i + 2;
            if v.len() != n.pow(k as u32) {
                return Err(Error::Dimension(format!("order-{k} coefficient has length {}", v.len())));
            }
            coeffs.push(SymmetricCoefficient { n, k, data: symmetrize(&v, n, k) });
        }
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument("energy polynomial needs at least the order-2 coefficient".into()));
        }
        Ok(EnergyPolynomial { kind, eta, degree: coeffs.len() + 1, n, coeffs })
    }

    /// Coefficient vector of order `k` (`2 ≤ k ≤ degree`).
    pub fn coeff(&self, k: usize) -> &DVector<f64> {
        &self.coeffs[k - 2].data
    }

    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.coeffs.iter().map(|c| c.data.clone()).collect()
    }

    /// The order-2 coefficient as a symmetric matrix.
    pub fn quadratic_matrix(&self) -> DMatrix<f64> {
        unvec(self.coeff(2), self.n, self.n)
    }

    /// Truncation to orders `2..=d`.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d < 2 || d > self.degree {
            return Err(Error::InvalidArgument(format!("cannot truncate degree {} to {d}", self.degree)));
        }
        Ok(EnergyPolynomial { degree: d, coeffs: self.coeffs[..d - 1].to_vec(), ..self.clone() })
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.coeffs.iter().map(|c| contract_full(c.data.as_slice(), x.as_slice(), c.k)).sum::<f64>()
    }

    /// `∇E(x) = ½ Σₖ k Wₖ x^{⊗(k−1)}`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for c in &self.coeffs {
            // contract all but one slot
            let mut t = c.data.as_slice().to_vec();
            for _ in 1..c.k {
                t = crate::kron::contract_last(&t, x.as_slice());
            }
            g += DVector::from_vec(t) * (0.5 * c.k as f64);
        }
        g
    }
}

fn quadratic_sum(coeffs: &[DVector<f64>], b: &DMatrix<f64>, n: usize, k: usize) -> DVector<f64> {
    // Σ_{i,j≥3, i+j=k+2} ij vec(WᵢᵀBBᵀWⱼ)
    let mut out = DVector::zeros(n.pow(k as u32));
    let bbt = b * b.transpose();
    for i in 3..k {
        let j = k + 2 - i;
        if j < 3 {
            continue;
        }
        let wi = unvec(&coeffs[i - 2], n, n.pow(i as u32 - 1));
        let wj = unvec(&coeffs[j - 2], n, n.pow(j as u32 - 1));
        out += vec_of(&(wi.transpose() * &bbt * wj)) * (i * j) as f64;
    }
    out
}

fn check_degree(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("energy degree must be at least 2, got {d}")));
    }
    Ok(())
}

/// Future energy coefficients of a system without input coupling.
pub fn future_coefficients_direct(ode: &QuadraticOde, eta: f64, d: usize) -> Result<Vec<DVector<f64>>> {
    check_degree(d)?;
    if ode.has_input_coupling() {
        return Err(Error::Unsupported("the closed-form recursion needs G = 0 and S = 0".into()));
    }
    let n = ode.dim();
    let ric = solve_riccati_future(&ode.a, &ode.b, &ode.c, None, eta)?;
    let w2 = ric.w;
    let f = &ode.a - &ode.b * ode.b.transpose() * &w2 * eta;
    let mut coeffs = vec![vec_of(&w2)];
    if d == 2 {
        return Ok(coeffs);
    }
    let solver = KwaySolver::new(&f, None)?;
    let nt = ode.n_quad.transpose();
    for k in 3..=d {
        let prev = &coeffs[k - 3];
        let mut rhs = -build_lk(&nt, None, k - 1)?.apply(prev)?;
        rhs += quadratic_sum(&coeffs, &ode.b, n, k) * (eta / 4.0);
        let w = solver.solve(k, &symmetrize(&rhs, n, k))?;
        coeffs.push(symmetrize(&w, n, k));
    }
    Ok(coeffs)
}

/// Future energy coefficients by degree matching in the HJB equation with
/// the power series of the optimal input; handles `G ≠ 0` and `S ≠ 0`.
pub fn future_coefficients_series(ode: &QuadraticOde, eta: f64, d: usize) -> Result<Vec<DVector<f64>>> {
    check_degree(d)?;
    let n = ode.dim();
    let ric = solve_riccati_future(&ode.a, &ode.b, &ode.c, None, eta)?;
    let w2 = ric.w;
    let f = &ode.a - &ode.b * ode.b.transpose() * &w2 * eta;
    let mut coeffs = vec![vec_of(&w2)];
    if d == 2 {
        return Ok(coeffs);
    }
    let solver = KwaySolver::new(&f, None)?;
    for k in 3..=d {
        // lower orders only; the order-k unknown enters linearly through F
        let mut lower = coeffs.clone();
        lower.push(DVector::zeros(n.pow(k as u32)));
        let p = costate_series(&lower, n);
        let u = feedback_series(ode, &p, eta, k - 1);
        let r = hamiltonian_term(ode, &p, &u, eta, k);
        let rhs = symmetrize(&r, n, k) * -2.0;
        let w = solver.solve(k, &rhs)?;
        coeffs.push(symmetrize(&w, n, k));
    }
    Ok(coeffs)
}

/// Past energy coefficients of a system without input coupling.
pub fn past_coefficients(ode: &QuadraticOde, eta: f64, d: usize) -> Result<Vec<DVector<f64>>> {
    check_degree(d)?;
    if ode.has_input_coupling() {
        return Err(Error::Unsupported(
            "past energy is implemented for constant input maps only (B₂ = 0)".into(),
        ));
    }
    let n = ode.dim();
    let ric = solve_riccati_past(&ode.a, &ode.b, &ode.c, eta)?;
    let v2 = ric.w;
    let f = &ode.a + &ode.b * ode.b.transpose() * &v2;
    let mut coeffs = vec![vec_of(&v2)];
    if d == 2 {
        return Ok(coeffs);
    }
    let solver = KwaySolver::new(&f, None)?;
    let nt = ode.n_quad.transpose();
    for k in 3..=d {
        let prev = &coeffs[k - 3];
        let mut rhs = -build_lk(&nt, None, k - 1)?.apply(prev)?;
        rhs -= quadratic_sum(&coeffs, &ode.b, n, k) * 0.25;
        let w = solver.solve(k, &symmetrize(&rhs, n, k))?;
        coeffs.push(symmetrize(&w, n, k));
    }
    Ok(coeffs)
}

pub fn future_energy_ode(ode: &QuadraticOde, eta: f64, d: usize) -> Result<EnergyPolynomial> {
    let coeffs = if ode.has_input_coupling() {
        future_coefficients_series(ode, eta, d)?
    } else {
        future_coefficients_direct(ode, eta, d)?
    };
    EnergyPolynomial::from_vectors(EnergyKind::Future, eta, ode.dim(), coeffs)
}

pub fn past_energy_ode(ode: &QuadraticOde, eta: f64, d: usize) -> Result<EnergyPolynomial> {
    EnergyPolynomial::from_vectors(EnergyKind::Past, eta, ode.dim(), past_coefficients(ode, eta, d)?)
}

/// Future energy of the reduced system, in `x_d` coordinates.
pub fn compute_future_energy(reduced: &ReducedOdeSystem, eta: f64, d: usize) -> Result<EnergyPolynomial> {
    future_energy_ode(&reduced.normalized()?, eta, d)
}

/// Past energy of the reduced system, in `x_d` coordinates.
pub fn compute_past_energy(reduced: &ReducedOdeSystem, eta: f64, d: usize) -> Result<EnergyPolynomial> {
    past_energy_ode(&reduced.normalized()?, eta, d)
}

pub fn compute_energy(reduced: &ReducedOdeSystem, kind: EnergyKind, eta: f64, d: usize) -> Result<EnergyPolynomial> {
    match kind {
        EnergyKind::Future => compute_future_energy(reduced, eta, d),
        EnergyKind::Past => compute_past_energy(reduced, eta, d),
    }
}

/// Pointwise residual of the HJB equation matching `poly.kind`.
pub fn hjb_residual_ode(poly: &EnergyPolynomial, ode: &QuadraticOde, x: &DVector<f64>) -> Result<f64> {
    hjb_terms(poly, ode, x).map(|(h, _)| h)
}

/// Residual together with the magnitude of the terms it cancels.
fn hjb_terms(poly: &EnergyPolynomial, ode: &QuadraticOde, x: &DVector<f64>) -> Result<(f64, f64)> {
    let p = poly.gradient(x);
    let cx = (&ode.c * x).norm_squared();
    match poly.kind {
        EnergyKind::Future => {
            let u = ode.optimal_input(x, &p, poly.eta)?;
            let f = ode.vector_field(x, &u);
            let mut h = p.dot(&f) + 0.5 * cx;
            let mut scale = p.norm() * f.norm() + 0.5 * cx;
            if poly.eta != 0.0 {
                let q = u.norm_squared() / (2.0 * poly.eta);
                h += q;
                scale += q;
            }
            Ok((h, scale))
        }
        EnergyKind::Past => {
            if ode.has_input_coupling() {
                return Err(Error::Unsupported("past HJB residual needs a constant input map".into()));
            }
            let f = &ode.a * x + &ode.n_quad * kron_vec(x, x);
            let btp = ode.b.transpose() * &p;
            let h = p.dot(&f) + 0.5 * btp.norm_squared() - 0.5 * poly.eta * cx;
            Ok((h, p.norm() * f.norm() + 0.5 * btp.norm_squared() + 0.5 * poly.eta.abs() * cx))
        }
    }
}

pub fn hjb_residual(poly: &EnergyPolynomial, reduced: &ReducedOdeSystem, x: &DVector<f64>) -> Result<f64> {
    hjb_residual_ode(poly, &reduced.normalized()?, x)
}

const ROUNDOFF_FACTOR: f64 = 64.0;

#[derive(Debug, Clone)]
pub struct HjbResidualReport {
    pub degree: usize,
    pub directions: Vec<DVector<f64>>,
    pub epsilons: Vec<f64>,
    /// `max over directions |residual(εx)| / ε^{d+1}`, one entry per ε.
    pub ratios: Vec<f64>,
    /// Rounding-error level of each ratio, in the same units.
    pub noise: Vec<f64>,
}

impl HjbResidualReport {
    /// Largest ratio relative to the first rung of the ladder.
    pub fn growth(&self) -> f64 {
        let first = self.ratios[0];
        let max = self.ratios.iter().copied().fold(0.0, f64::max);
        if first > 0.0 {
            max / first
        } else if max == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }

    /// A residual of the wrong order grows at least by the ladder ratio
    /// (here ≥ 3) per missing power; a bounded ratio stays within a small
    /// factor of its first value, up to rounding error.
    pub fn is_bounded(&self) -> bool {
        let first = self.ratios[0];
        self.ratios.iter().all(|r| r.is_finite())
            && self.ratios.iter().zip(&self.noise).all(|(r, n)| *r <= 2.5 * first + n)
    }
}

pub fn hjb_residual_ladder(
    poly: &EnergyPolynomial,
    ode: &QuadraticOde,
    epsilons: &[f64],
    n_directions: usize,
    seed: u64,
) -> Result<HjbResidualReport> {
    let n = poly.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<DVector<f64>> = (0..n_directions.max(1))
        .map(|_| {
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let norm = v.norm();
            if norm > 0.0 { v / norm } else { DVector::from_element(n, 1.0 / (n as f64).sqrt()) }
        })
        .collect();
    let mut ratios = Vec::with_capacity(epsilons.len());
    let mut noise = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for dir in &directions {
            let (r, s) = hjb_terms(poly, ode, &(dir * eps))?;
            worst = worst.max(r.abs());
            scale = scale.max(s);
        }
        let denom = eps.powi(poly.degree as i32 + 1);
        ratios.push(worst / denom);
        noise.push(ROUNDOFF_FACTOR * f64::EPSILON * scale / denom);
    }
    Ok(HjbResidualReport { degree: poly.degree, directions, epsilons: epsilons.to_vec(), ratios, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{build_fisher, build_scalar_example, scalar_reference_state, FisherConfig, SCALAR_ETA};
    use crate::kron::kron_power_vec;
    use crate::reduction::reduce_system;
    use approx::assert_relative_eq;

    fn scalar_ode() -> QuadraticOde {
        reduce_system(&build_scalar_example()).unwrap().normalized().unwrap()
    }

    pub(crate) fn random_ode(n: usize, m: usize, coupled: bool, seed: u64) -> QuadraticOde {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |a: usize, b: usize, s: f64| DMatrix::from_fn(a, b, |_, _| rng.random_range(-s..s));
        let a = r(n, n, 1.0) - DMatrix::identity(n, n) * 1.5;
        let nq = r(n, n * n, 0.5);
        let b = r(n, m, 1.0);
        let c = r(1, n, 1.0);
        let mut ode = QuadraticOde::new(a, nq, b, c).unwrap();
        if coupled {
            ode.g_left = r(n, n * m, 0.3);
            ode.g_right = r(n, m * n, 0.3);
            ode.s_quad = r(n, m * m, 0.3);
        }
        ode
    }

    #[test]
    fn scalar_coefficients() {
        let coeffs = future_coefficients_direct(&scalar_ode(), SCALAR_ETA, 6).unwrap();
        let expected: [f64; 5] = [0.2316625, 0.0987812, 0.0308364, 0.00475737, -0.00114681];
        assert_relative_eq!(coeffs[0][0], (-1.0 + 11f64.sqrt()) / 10.0, epsilon = 1e-12);
        for (c, e) in coeffs.iter().zip(expected) {
            assert!((c[0].abs() - e.abs()).abs() < 1e-6, "{} vs {e}", c[0]);
        }
    }

    #[test]
    fn scalar_value_columns() {
        let red = reduce_system(&build_scalar_example()).unwrap();
        let poly = compute_future_energy(&red, SCALAR_ETA, 6).unwrap();
        let minus = [0.11583, 0.16522, 0.18064, 0.18302, 0.18245];
        let plus = [0.11583, 0.06644, 0.08186, 0.07948, 0.078907];
        for d in 1..=5 {
            let p = poly.truncated(d + 1).unwrap();
            let xm = scalar_reference_state(&red, -1.0);
            let xp = scalar_reference_state(&red, 1.0);
            assert!((p.eval(&xm) - minus[d - 1]).abs() < 5e-5, "d={d}");
            assert!((p.eval(&xp) - plus[d - 1]).abs() < 5e-5, "d={d}");
        }
    }

    #[test]
    fn eta_zero_is_observability_energy() {
        let coeffs = future_coefficients_direct(&scalar_ode(), 0.0, 2).unwrap();
        assert_relative_eq!(coeffs[0][0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn past_scalar_quadratic() {
        let coeffs = past_coefficients(&scalar_ode(), SCALAR_ETA, 4).unwrap();
        assert_relative_eq!(coeffs[0][0], 1.0 + 11f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn routes_agree_without_coupling() {
        for seed in 0..4 {
            let ode = random_ode(3, 2, false, seed);
            let a = future_coefficients_direct(&ode, 0.8, 5).unwrap();
            let b = future_coefficients_series(&ode, 0.8, 5).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() <= 1e-10 * x.norm().max(1.0));
            }
        }
    }

    #[test]
    fn coefficients_are_symmetric_and_quadratic_psd() {
        let ode = random_ode(3, 1, true, 9);
        let poly = future_energy_ode(&ode, 0.5, 5).unwrap();
        for c in &poly.coeffs {
            assert!((symmetrize(&c.data, 3, c.k) - &c.data).norm() <= 1e-14 * c.data.norm().max(1.0));
        }
        let w2 = poly.quadratic_matrix();
        assert!(w2.symmetric_eigenvalues().min() >= -1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let poly = future_energy_ode(&random_ode(3, 1, false, 1), 0.9, 5).unwrap();
        let x = DVector::from_column_slice(&[0.2, -0.1, 0.3]);
        let g = poly.gradient(&x);
        for i in 0..3 {
            let mut e = DVector::zeros(3);
            e[i] = 1e-6;
            let fd = (poly.eval(&(&x + &e)) - poly.eval(&(&x - &e))) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
        assert_eq!(poly.eval(&DVector::zeros(3)), 0.0);
        let direct: f64 = (2..=5).map(|k| poly.coeff(k).dot(&kron_power_vec(&x, k))).sum::<f64>() * 0.5;
        assert_relative_eq!(poly.eval(&x), direct, epsilon = 1e-15);
    }

    #[test]
    fn residual_vanishes_at_origin_and_for_linear_quadratic() {
        let mut ode = random_ode(3, 2, false, 4);
        ode.n_quad.fill(0.0);
        let poly = future_energy_ode(&ode, 0.7, 2).unwrap();
        assert_eq!(hjb_residual_ode(&poly, &ode, &DVector::zeros(3)).unwrap(), 0.0);
        let x = DVector::from_column_slice(&[1.3, -0.4, 2.0]);
        assert!(hjb_residual_ode(&poly, &ode, &x).unwrap().abs() <= 1e-10);
        let past = past_energy_ode(&ode, 0.7, 2).unwrap();
        assert!(hjb_residual_ode(&past, &ode, &x).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn residual_order_ladders() {
        let eps = [1e-1, 3e-2, 1e-2, 3e-3];
        let cases = [(scalar_ode(), SCALAR_ETA), (random_ode(3, 1, false, 5), 0.6), (random_ode(3, 1, true, 6), 0.6)];
        for (ode, eta) in &cases {
            for d in 3..=6 {
                let poly = future_energy_ode(ode, *eta, d).unwrap();
                let rep = hjb_residual_ladder(&poly, ode, &eps, 6, 1).unwrap();
                assert!(rep.is_bounded(), "future d={d}: {:?}", rep.ratios);
                if !ode.has_input_coupling() {
                    let past = past_energy_ode(ode, *eta, d).unwrap();
                    let rep = hjb_residual_ladder(&past, ode, &eps, 6, 1).unwrap();
                    assert!(rep.is_bounded(), "past d={d}: {:?}", rep.ratios);
                }
            }
        }
    }

    #[test]
    fn ladder_rejects_wrong_top_coefficient() {
        let ode = random_ode(3, 1, false, 5);
        let poly = future_energy_ode(&ode, 0.6, 4).unwrap();
        let mut vectors = poly.vectors();
        let last = vectors.len() - 1;
        vectors[last] = vectors[last].map(|v| v + 1e-2);
        let bad = EnergyPolynomial::from_vectors(EnergyKind::Future, 0.6, 3, vectors).unwrap();
        let rep = hjb_residual_ladder(&bad, &ode, &[1e-1, 3e-2, 1e-2, 3e-3], 6, 1).unwrap();
        assert!(!rep.is_bounded(), "{:?}", rep.ratios);
    }

    #[test]
    fn fisher_energy_runs_with_input_coupling() {
        let red = reduce_system(&build_fisher(&FisherConfig::case1())).unwrap();
        let ode = red.normalized().unwrap();
        assert!(ode.has_input_coupling());
        let poly = future_energy_ode(&ode, 30.0, 4).unwrap();
        let rep = hjb_residual_ladder(&poly, &ode, &[1e-1, 3e-2, 1e-2, 3e-3], 3, 2).unwrap();
        assert!(rep.is_bounded(), "{:?}", rep.ratios);
        assert!(matches!(past_energy_ode(&ode, 30.0, 3), Err(Error::Unsupported(_))));
    }
}
