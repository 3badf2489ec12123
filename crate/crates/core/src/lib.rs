//! Polynomial approximations of past and future energy functions for
//! quadratic control systems with Stokes-type (saddle-point) algebraic
//! constraints.
//!
//! The pipeline is:
//!
//! 1. [`reduction`] validates a [`StokesDaeSystem`] and eliminates the
//!    algebraic variables with an oblique projector, producing a
//!    [`ReducedOdeSystem`] in the differential coordinates `x_d`.
//! 2. [`energy`] computes symmetrized Kronecker coefficients of the energy
//!    polynomial by solving a Riccati equation and a sequence of k-way
//!    Lyapunov systems ([`linalg`]).
//! 3. [`monolithic`] computes the same coefficients from the original
//!    (unprojected) matrices via bordered saddle-point systems.
//! 4. [`sim`] turns energies into polynomial feedback laws and integrates
//!    the closed loop to compare predicted and realized cost.
//!
//! Vectors that represent coefficients of `x ⊗ … ⊗ x` use the standard
//! Kronecker ordering (first factor varies slowest), which is the
//! column-major `vec` convention: `vec(A X Bᵀ) = (B ⊗ A) vec(X)`.

pub mod benchmarks;
pub mod energy;
mod error;
pub mod io;
pub mod kron;
pub mod linalg;
pub mod monolithic;
pub mod reduction;
pub mod series;
pub mod sim;

pub use energy::{EnergyKind, EnergyPolynomial, QuadraticOde};
pub use error::{Error, Result};
pub use reduction::{ProjectorPair, ReducedOdeSystem, StokesDaeSystem};

pub use nalgebra::{DMatrix, DVector};
