//! JSON documents for systems, reduced systems and energy polynomials.
//!
//! Matrices are stored either densely (row-major) or as coordinate
//! triplets; the quadratic term `N` is always stored as `(i, j, k, value)`
//! entries meaning `N[i, j·n₁ + k]`, and is symmetrized in `(j, k)` on load.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::energy::{EnergyKind, EnergyPolynomial};
use crate::kron::SymmetricCoefficient;
use crate::reduction::{ProjectorPair, ReducedOdeSystem, StokesDaeSystem};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum MatrixData {
    Dense { rows: usize, cols: usize, data: Vec<f64> },
    Triplets { rows: usize, cols: usize, entries: Vec<(usize, usize, f64)> },
}

impl MatrixData {
    /// Triplets when at most a third of the entries are nonzero.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let nnz = m.iter().filter(|v| **v != 0.0).count();
        if rows * cols > 0 && 3 * nnz <= rows * cols {
            let mut entries = Vec::with_capacity(nnz);
            for i in 0..rows {
                for j in 0..cols {
                    if m[(i, j)] != 0.0 {
                        entries.push((i, j, m[(i, j)]));
                    }
                }
            }
            MatrixData::Triplets { rows, cols, entries }
        } else {
            MatrixData::dense(m)
        }
    }

    pub fn dense(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        MatrixData::Dense { rows, cols, data: m.transpose().as_slice().to_vec() }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixData::Dense { rows, cols, .. } | MatrixData::Triplets { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixData::Dense { rows, cols, data } => {
                if data.len() != rows * cols {
                    return Err(Error::Dimension(format!(
                        "{name}: {} values for a {rows}×{cols} matrix",
                        data.len()
                    )));
                }
                Ok(DMatrix::from_row_slice(*rows, *cols, data))
            }
            MatrixData::Triplets { rows, cols, entries } => {
                let mut m = DMatrix::zeros(*rows, *cols);
                for &(i, j, v) in entries {
                    if i >= *rows || j >= *cols {
                        return Err(Error::Dimension(format!("{name}: entry ({i}, {j}) outside {rows}×{cols}")));
                    }
                    m[(i, j)] += v;
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Default cost weight for commands that need one.
    #[serde(default)]
    pub eta: Option<f64>,
    pub dims: Dims,
    pub e11: MatrixData,
    pub a11: MatrixData,
    pub a12: MatrixData,
    /// `(i, j, k, value)` with `value` at `N[i, j·n₁ + k]`.
    pub n: Vec<(usize, usize, usize, f64)>,
    pub b1: MatrixData,
    pub b2: MatrixData,
    pub c1: MatrixData,
}

fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported schema version {v} (expected {SCHEMA_VERSION})")));
    }
    Ok(())
}

fn expect_shape(name: &str, m: &MatrixData, want: (usize, usize)) -> Result<DMatrix<f64>> {
    if m.shape() != want {
        let got = m.shape();
        return Err(Error::Dimension(format!(
            "{name} is declared {}×{}, expected {}×{}",
            got.0, got.1, want.0, want.1
        )));
    }
    m.to_matrix(name)
}

impl SystemDocument {
    pub fn from_system(sys: &StokesDaeSystem, name: &str, eta: Option<f64>) -> Self {
        let (n1, n2, m, p) = sys.dims();
        let mut n = Vec::new();
        for i in 0..n1 {
            for j in 0..n1 {
                for k in 0..n1 {
                    let v = sys.n[(i, j * n1 + k)];
                    if v != 0.0 {
                        n.push((i, j, k, v));
                    }
                }
            }
        }
        SystemDocument {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            eta,
            dims: Dims { n1, n2, m, p },
            e11: MatrixData::from_matrix(&sys.e11),
            a11: MatrixData::from_matrix(&sys.a11),
            a12: MatrixData::from_matrix(&sys.a12),
            n,
            b1: MatrixData::from_matrix(&sys.b1),
            b2: MatrixData::from_matrix(&sys.b2),
            c1: MatrixData::from_matrix(&sys.c1),
        }
    }

    pub fn to_system(&self) -> Result<StokesDaeSystem> {
        check_version(self.schema_version)?;
        let Dims { n1, n2, m, p } = self.dims;
        let e11 = expect_shape("E11", &self.e11, (n1, n1))?;
        let a11 = expect_shape("A11", &self.a11, (n1, n1))?;
        let a12 = expect_shape("A12", &self.a12, (n1, n2))?;
        let b1 = expect_shape("B1", &self.b1, (n1, m))?;
        let b2 = expect_shape("B2", &self.b2, (n2, m))?;
        let c1 = expect_shape("C1", &self.c1, (p, n1))?;
        let mut raw = DMatrix::zeros(n1, n1 * n1);
        for &(i, j, k, v) in &self.n {
            if i >= n1 || j >= n1 || k >= n1 {
                return Err(Error::Dimension(format!("N entry ({i}, {j}, {k}) outside n₁ = {n1}")));
            }
            raw[(i, j * n1 + k)] += v;
        }
        let n = DMatrix::from_fn(n1, n1 * n1, |i, c| {
            let (j, k) = (c / n1, c % n1);
            if j == k {
                raw[(i, c)]
            } else {
                0.5 * (raw[(i, c)] + raw[(i, k * n1 + j)])
            }
        });
        StokesDaeSystem::new(e11, a11, a12, n, b1, b2, c1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedDocument {
    pub schema_version: u32,
    pub e_d: MatrixData,
    pub a_d: MatrixData,
    pub n_d: MatrixData,
    pub b_const: MatrixData,
    pub g_left: MatrixData,
    pub g_right: MatrixData,
    pub s_d: MatrixData,
    pub s: MatrixData,
    pub c_d: MatrixData,
    pub d_d: MatrixData,
    pub pi: MatrixData,
    pub theta_l: MatrixData,
    pub theta_r: MatrixData,
}

impl ReducedDocument {
    pub fn from_reduced(r: &ReducedOdeSystem) -> Self {
        let d = MatrixData::dense;
        ReducedDocument {
            schema_version: SCHEMA_VERSION,
            e_d: d(&r.e_d),
            a_d: d(&r.a_d),
            n_d: d(&r.n_d),
            b_const: d(&r.b_const),
            g_left: d(&r.g_left),
            g_right: d(&r.g_right),
            s_d: d(&r.s_d),
            s: d(&r.s),
            c_d: d(&r.c_d),
            d_d: d(&r.d_d),
            pi: d(&r.projectors.pi),
            theta_l: d(&r.projectors.theta_l),
            theta_r: d(&r.projectors.theta_r),
        }
    }

    pub fn to_reduced(&self) -> Result<ReducedOdeSystem> {
        check_version(self.schema_version)?;
        let (n, _) = self.e_d.shape();
        let (m, p) = (self.b_const.shape().1, self.c_d.shape().0);
        let (n1, _) = self.theta_r.shape();
        Ok(ReducedOdeSystem {
            e_d: expect_shape("E_d", &self.e_d, (n, n))?,
            a_d: expect_shape("A_d", &self.a_d, (n, n))?,
            n_d: expect_shape("N_d", &self.n_d, (n, n * n))?,
            b_const: expect_shape("B_d", &self.b_const, (n, m))?,
            g_left: expect_shape("G_left", &self.g_left, (n, n * m))?,
            g_right: expect_shape("G_right", &self.g_right, (n, m * n))?,
            s_d: expect_shape("S_d", &self.s_d, (n, m * m))?,
            s: expect_shape("s", &self.s, (n1, m))?,
            c_d: expect_shape("C_d", &self.c_d, (p, n))?,
            d_d: expect_shape("D_d", &self.d_d, (p, m))?,
            projectors: ProjectorPair {
                pi: expect_shape("Pi", &self.pi, (n1, n1))?,
                theta_l: expect_shape("Theta_l", &self.theta_l, (n1, n))?,
                theta_r: expect_shape("Theta_r", &self.theta_r, (n1, n))?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDocument {
    pub schema_version: u32,
    pub kind: String,
    pub eta: f64,
    pub n: usize,
    pub degree: usize,
    /// Orders `2..=degree`, each of length `n^k`.
    pub coeffs: Vec<Vec<f64>>,
}

impl EnergyDocument {
    pub fn from_energy(e: &EnergyPolynomial) -> Self {
        EnergyDocument {
            schema_version: SCHEMA_VERSION,
            kind: e.kind.to_string(),
            eta: e.eta,
            n: e.n,
            degree: e.degree,
            coeffs: e.coeffs.iter().map(|c| c.data.as_slice().to_vec()).collect(),
        }
    }

    /// Coefficients are taken as stored (no re-symmetrization), so a round
    /// trip is exact.
    pub fn to_energy(&self) -> Result<EnergyPolynomial> {
        check_version(self.schema_version)?;
        let kind: EnergyKind = self.kind.parse()?;
        if self.degree < 2 || self.coeffs.len() != self.degree - 1 {
            return Err(Error::Dimension(format!(
                "degree {} needs {} coefficient vectors, found {}",
                self.degree,
                self.degree.saturating_sub(1),
                self.coeffs.len()
            )));
        }
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = i + 2;
            if Some(c.len()) != self.n.checked_pow(k as u32) {
                return Err(Error::Dimension(format!("order-{k} coefficient has length {}", c.len())));
            }
            coeffs.push(SymmetricCoefficient { n: self.n, k, data: DVector::from_column_slice(c) });
        }
        Ok(EnergyPolynomial { kind, eta: self.eta, degree: self.degree, n: self.n, coeffs })
    }
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(fs::write(path, s)?)
}

pub fn read_system(path: impl AsRef<Path>) -> Result<(StokesDaeSystem, SystemDocument)> {
    let doc: SystemDocument = read_json(path)?;
    Ok((doc.to_system()?, doc))
}

pub fn read_energy(path: impl AsRef<Path>) -> Result<EnergyPolynomial> {
    read_json::<EnergyDocument>(path)?.to_energy()
}

pub fn read_reduced(path: impl AsRef<Path>) -> Result<ReducedOdeSystem> {
    read_json::<ReducedDocument>(path)?.to_reduced()
}
