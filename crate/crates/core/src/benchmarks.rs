//! Built-in test systems: a two-state scalar example and a finite-element
//! discretization of Dirichlet boundary control for the 1D Fisher equation.

use nalgebra::{DMatrix, DVector};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::reduction::{ReducedOdeSystem, StokesDaeSystem};

/// Cost weight used with the scalar example.
pub const SCALAR_ETA: f64 = 10.0;

/// Printed initial condition of the first Fisher study (two decimals).
pub const FISHER_CASE1_INITIAL: [f64; 15] = [
    -0.06, -0.47, 0.05, -0.06, -0.08, -0.17, -0.30, 0.12, -0.20, -0.23, 0.12, 0.03, -0.37, 0.01, -0.32,
];

/// Two differential states, one algebraic state, one input, one output.
pub fn build_scalar_example() -> StokesDaeSystem {
    StokesDaeSystem {
        e11: DMatrix::identity(2, 2),
        a11: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]),
        a12: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        n: DMatrix::from_row_slice(2, 4, &[0.5, -1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0]),
        b1: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        b2: DMatrix::zeros(1, 1),
        c1: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
    }
}

/// Reduced coordinates of the scalar example's state `x₁ = ξ·(−1, 1)ᵀ/√2`.
///
/// Tabulated results for this example are quoted against that orientation
/// of the constraint space, which is the opposite of the one produced by
/// [`crate::reduction::null_space_basis`].
pub fn scalar_reference_state(reduced: &ReducedOdeSystem, xi: f64) -> DVector<f64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let x1 = DVector::from_column_slice(&[-h * xi, h * xi]);
    reduced.projectors.theta_r.transpose() * x1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherConfig {
    pub ne: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

impl FisherConfig {
    pub fn case1() -> Self {
        FisherConfig { ne: 16, alpha: 0.1, beta: 3.0, eta: 30.0 }
    }

    pub fn case2() -> Self {
        FisherConfig { ne: 16, alpha: 0.1, beta: 1.0, eta: 30.0 }
    }

    /// Integration horizon used for this benchmark.
    pub const HORIZON: f64 = 20.0;
}

/// Mass and stiffness matrices on nodes `ξ_j = j h`, `j = 0..Ne−1`
/// (the node at `ξ = 1` carries the homogeneous Dirichlet condition).
pub fn fisher_mass_stiffness(ne: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(ne >= 2, "need at least two elements");
    let h = 1.0 / ne as f64;
    let mut m = DMatrix::zeros(ne, ne);
    let mut k = DMatrix::zeros(ne, ne);
    let ml = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let kl = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
    for e in 0..ne {
        let nodes = [e, e + 1];
        for a in 0..2 {
            for b in 0..2 {
                if nodes[a] < ne && nodes[b] < ne {
                    m[(nodes[a], nodes[b])] += ml[a][b];
                    k[(nodes[a], nodes[b])] += kl[a][b];
                }
            }
        }
    }
    (m, k)
}

/// `∫ φ_i φ_a φ_b` over the mesh, stored as `T[i, a·n + b]`.
fn hat_triple_products(ne: usize) -> DMatrix<f64> {
    let h = 1.0 / ne as f64;
    let mut t = DMatrix::zeros(ne, ne * ne);
    for e in 0..ne {
        let nodes = [e, e + 1];
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let (i, j, l) = (nodes[a], nodes[b], nodes[c]);
                    if i >= ne || j >= ne || l >= ne {
                        continue;
                    }
                    let v = if a == b && b == c { h / 4.0 } else { h / 12.0 };
                    t[(i, j * ne + l)] += v;
                }
            }
        }
    }
    t
}

pub fn build_fisher(cfg: &FisherConfig) -> StokesDaeSystem {
    assert!(cfg.ne >= 2 && cfg.alpha > 0.0, "invalid Fisher configuration");
    let ne = cfg.ne;
    let (m, k) = fisher_mass_stiffness(ne);
    let mut a12 = DMatrix::zeros(ne, 1);
    a12[(0, 0)] = 1.0;
    StokesDaeSystem {
        a11: &k * (-cfg.alpha) + &m * cfg.beta,
        e11: m,
        a12,
        n: hat_triple_products(ne) * (-cfg.beta),
        b1: DMatrix::zeros(ne, 1),
        b2: DMatrix::from_element(1, 1, -1.0),
        c1: DMatrix::from_element(1, ne, 1.0 / ne as f64),
    }
}

/// Seeded random Stokes-type system with `B₂ = 0`: `E₁₁` symmetric
/// positive definite, `A₁₁` shifted to be mostly stable, dense `A₁₂`.
pub fn random_stokes_system(n1: usize, n2: usize, m: usize, p: usize, seed: u64) -> StokesDaeSystem {
    assert!(n2 < n1, "need n₂ < n₁");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |a: usize, b: usize, s: f64| DMatrix::from_fn(a, b, |_, _| rng.random_range(-s..s));
    let g = r(n1, n1, 0.3);
    let e11 = DMatrix::identity(n1, n1) + &g * g.transpose();
    let a11 = r(n1, n1, 1.0) - DMatrix::identity(n1, n1) * 1.5;
    let a12 = r(n1, n2, 1.0);
    let n = r(n1, n1 * n1, 0.5);
    let b1 = r(n1, m, 1.0);
    let c1 = r(p, n1, 1.0);
    StokesDaeSystem { e11, a11, a12, n, b1, b2: DMatrix::zeros(n2, m), c1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::kron_vec;
    use crate::reduction::{reduce_system, validate_stokes_dae};
    use approx::assert_relative_eq;

    fn count_unstable(a: &DMatrix<f64>) -> usize {
        a.complex_eigenvalues().iter().filter(|l| l.re > 0.0).count()
    }

    #[test]
    fn scalar_example_matrices() {
        let sys = build_scalar_example();
        assert_eq!(sys.a12, DMatrix::from_column_slice(2, 1, &[1.0, 1.0]));
        assert!(validate_stokes_dae(&sys).is_valid());
        assert_relative_eq!(reduce_system(&sys).unwrap().a_d[(0, 0)], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn reference_orientation_flips_sign() {
        let red = reduce_system(&build_scalar_example()).unwrap();
        assert_relative_eq!(scalar_reference_state(&red, -1.0)[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fisher_stencils() {
        let sys = build_fisher(&FisherConfig::case1());
        let h = 1.0 / 16.0;
        let (m, k) = fisher_mass_stiffness(16);
        assert_relative_eq!(m[(0, 0)], h / 3.0, epsilon = 1e-15);
        assert_relative_eq!(k[(0, 0)], 1.0 / h, epsilon = 1e-12);
        for i in 1..16 {
            assert_relative_eq!(m[(i, i)], 4.0 * h / 6.0, epsilon = 1e-15);
            assert_relative_eq!(m[(i, i - 1)], h / 6.0, epsilon = 1e-15);
            assert_relative_eq!(k[(i, i)], 2.0 / h, epsilon = 1e-12);
            assert_relative_eq!(k[(i, i - 1)], -1.0 / h, epsilon = 1e-12);
        }
        assert_eq!(m, m.transpose());
        assert_eq!(k, k.transpose());
        assert!(m.clone().cholesky().is_some());
        assert!(k.symmetric_eigenvalues().min() > -1e-12);
        assert!(sys.c1.iter().all(|v| *v == 1.0 / 16.0));
        assert_eq!(sys.a12[(0, 0)], 1.0);
        assert_eq!(sys.b2[(0, 0)], -1.0);
        assert!(validate_stokes_dae(&sys).is_valid());
    }

    #[test]
    fn fisher_unstable_modes() {
        let sys = build_fisher(&FisherConfig::case1());
        let unreduced = sys.e11.clone().lu().solve(&sys.a11).unwrap();
        assert_eq!(count_unstable(&unreduced), 2);
        let red = reduce_system(&sys).unwrap();
        let reduced = red.e_d.clone().lu().solve(&red.a_d).unwrap();
        assert_eq!(count_unstable(&reduced), 1);
        assert_eq!(red.dim(), 15);
    }

    #[test]
    fn quadratic_tensor_matches_quadrature() {
        let cfg = FisherConfig::case1();
        let sys = build_fisher(&cfg);
        let ne = cfg.ne;
        let h = 1.0 / ne as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DVector::from_fn(ne, |_, _| rng.random_range(-1.0..1.0));
        let nodal = |j: usize| if j < ne { x[j] } else { 0.0 };
        // 3-point Gauss rule, exact for the cubic integrands
        let gp = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
        let mut oracle = DVector::zeros(ne);
        for e in 0..ne {
            for &(g, wgt) in &gp {
                let s = 0.5 * (g + 1.0);
                let w_h = nodal(e) * (1.0 - s) + nodal(e + 1) * s;
                let jac = 0.5 * h;
                if e < ne {
                    oracle[e] += -cfg.beta * (1.0 - s) * w_h * w_h * wgt * jac;
                }
                if e + 1 < ne {
                    oracle[e + 1] += -cfg.beta * s * w_h * w_h * wgt * jac;
                }
            }
        }
        assert_relative_eq!(&sys.n * kron_vec(&x, &x), oracle, epsilon = 1e-14);
    }
}
