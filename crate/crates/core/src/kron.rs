//! Kronecker-product primitives.
//!
//! Everything here works on flat coefficient vectors in Kronecker order: for
//! a tensor with mode sizes `(d₀, …, d_{k-1})` the multi-index
//! `(i₀, …, i_{k-1})` lives at `((i₀·d₁ + i₁)·d₂ + …)`, so mode 0 varies
//! slowest. Structured operators are applied by successive mode products and
//! only assembled on request.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Upper bound on the number of entries of any densely assembled operator.
pub const MAX_DENSE_ENTRIES: usize = 20_000_000;

/// `x ⊗ x ⊗ … ⊗ x` with `order` factors.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerPower {
    pub base_dim: usize,
    pub order: usize,
    pub data: DVector<f64>,
}

impl KroneckerPower {
    /// Entry at the multi-index `(i₁, …, i_k)`.
    pub fn entry(&self, index: &[usize]) -> f64 {
        self.data[linear_index(index, self.base_dim)]
    }
}

pub fn kron_power(x: &DVector<f64>, k: usize) -> Result<KroneckerPower> {
    if k == 0 {
        return Err(Error::InvalidArgument("Kronecker power of order 0".into()));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("Kronecker power of an empty vector".into()));
    }
    Ok(KroneckerPower {
        base_dim: x.len(),
        order: k,
        data: kron_power_vec(x, k),
    })
}

/// Unchecked Kronecker power; `k = 0` yields the scalar `[1]`.
pub(crate) fn kron_power_vec(x: &DVector<f64>, k: usize) -> DVector<f64> {
    let mut out = DVector::from_element(1, 1.0);
    for _ in 0..k {
        out = kron_vec(&out, x);
    }
    out
}

pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let base = i * b.len();
        for (j, &bj) in b.iter().enumerate() {
            out[base + j] = ai * bj;
        }
    }
    out
}

/// Dense Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub(crate) fn linear_index(index: &[usize], n: usize) -> usize {
    index.iter().fold(0, |acc, &i| acc * n + i)
}

/// Mode product of a flat tensor: replaces mode `mode` (size `dims[mode]`)
/// by `mat · (that mode)`.
pub(crate) fn mode_product(data: &[f64], dims: &[usize], mode: usize, mat: &DMatrix<f64>) -> Vec<f64> {
    let left: usize = dims[..mode].iter().product();
    let mid = dims[mode];
    let right: usize = dims[mode + 1..].iter().product();
    let rows = mat.nrows();
    debug_assert_eq!(mat.ncols(), mid);
    let mut out = vec![0.0; left * rows * right];
    for l in 0..left {
        for m in 0..mid {
            let src = &data[(l * mid + m) * right..(l * mid + m + 1) * right];
            for r in 0..rows {
                let c = mat[(r, m)];
                if c == 0.0 {
                    continue;
                }
                let dst = &mut out[(l * rows + r) * right..(l * rows + r + 1) * right];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
    }
    out
}

/// `(A₁ ⊗ … ⊗ A_k) v` without assembling the product.
pub fn kron_apply(factors: &[&DMatrix<f64>], v: &DVector<f64>) -> Result<DVector<f64>> {
    if factors.is_empty() {
        return Err(Error::InvalidArgument("kron_apply needs at least one factor".into()));
    }
    let cols: usize = factors.iter().map(|f| f.ncols()).product();
    if cols != v.len() {
        return Err(Error::Dimension(format!(
            "Kronecker factors have {cols} columns in total but the vector has length {}",
            v.len()
        )));
    }
    Ok(kron_apply_unchecked(factors, v.as_slice()))
}

pub(crate) fn kron_apply_unchecked(factors: &[&DMatrix<f64>], v: &[f64]) -> DVector<f64> {
    let mut dims: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
    let mut data = v.to_vec();
    for (mode, f) in factors.iter().enumerate() {
        data = mode_product(&data, &dims, mode, f);
        dims[mode] = f.nrows();
    }
    DVector::from_vec(data)
}

/// Column-major reshape of a vector into a `rows × cols` matrix.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Column-major `vec`.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Contract a coefficient of order `k` with `x` in the last slot,
/// `t ↦ (I^{⊗(k-1)} ⊗ xᵀ) t`.
pub(crate) fn contract_last(t: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    t.chunks_exact(n)
        .map(|c| c.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `⟨t, x^{⊗k}⟩` evaluated by repeated contraction.
pub(crate) fn contract_full(t: &[f64], x: &[f64], k: usize) -> f64 {
    let mut cur = t.to_vec();
    for _ in 0..k {
        cur = contract_last(&cur, x);
    }
    cur.first().copied().unwrap_or(0.0)
}

/// Returns `k` with `n^k = len`, if any (`k ≥ 1`).
pub fn perfect_power_order(len: usize, n: usize) -> Option<usize> {
    if n == 0 {
        return None;
    }
    if n == 1 {
        return (len == 1).then_some(1);
    }
    let mut p = n;
    let mut k = 1;
    while p < len {
        p = p.checked_mul(n)?;
        k += 1;
    }
    (p == len).then_some(k)
}

fn checked_entries(rows: usize, cols: usize) -> Result<()> {
    match rows.checked_mul(cols) {
        Some(e) if e <= MAX_DENSE_ENTRIES => Ok(()),
        Some(e) => Err(Error::TooLarge { entries: e }),
        None => Err(Error::TooLarge { entries: usize::MAX }),
    }
}

pub(crate) fn kron_chain(factors: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = factors[0].clone();
    for f in &factors[1..] {
        out = out.kronecker(f);
    }
    out
}

#[derive(Debug, Clone)]
pub enum Representation {
    Factored,
    Dense(DMatrix<f64>),
}

/// The generalized k-way Lyapunov matrix
/// `Σᵢ E^{⊗(i-1)} ⊗ M ⊗ E^{⊗(k-i)}` for `M: q×n`, `E: n×n`.
#[derive(Debug, Clone)]
pub struct KWayLyapunovOperator {
    pub m: DMatrix<f64>,
    /// `None` means the identity.
    pub e: Option<DMatrix<f64>>,
    pub k: usize,
    pub representation: Representation,
    identity: DMatrix<f64>,
}

pub fn build_lk(m: &DMatrix<f64>, e: Option<&DMatrix<f64>>, k: usize) -> Result<KWayLyapunovOperator> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-way Lyapunov operator needs k ≥ 1".into()));
    }
    let n = m.ncols();
    if let Some(e) = e {
        if e.nrows() != n || e.ncols() != n {
            return Err(Error::Dimension(format!(
                "E must be {n}×{n} to match M's columns, got {}×{}",
                e.nrows(),
                e.ncols()
            )));
        }
    }
    Ok(KWayLyapunovOperator {
        m: m.clone(),
        e: e.cloned(),
        k,
        representation: Representation::Factored,
        identity: DMatrix::identity(n, n),
    })
}

impl KWayLyapunovOperator {
    pub fn n(&self) -> usize {
        self.m.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.n().pow(self.k as u32 - 1) * self.m.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.n().pow(self.k as u32)
    }

    fn e_ref(&self) -> &DMatrix<f64> {
        self.e.as_ref().unwrap_or(&self.identity)
    }

    /// Kronecker factors of term `i` (0-based slot of `M`).
    pub fn term_factors(&self, slot: usize) -> Vec<&DMatrix<f64>> {
        (0..self.k)
            .map(|j| if j == slot { &self.m } else { self.e_ref() })
            .collect()
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "k-way operator expects length {}, got {}",
                self.ncols(),
                v.len()
            )));
        }
        if let Representation::Dense(a) = &self.representation {
            return Ok(a * v);
        }
        let mut out = DVector::zeros(self.nrows());
        for slot in 0..self.k {
            out += kron_apply_unchecked(&self.term_factors(slot), v.as_slice());
        }
        Ok(out)
    }

    pub fn assemble(&self) -> Result<DMatrix<f64>> {
        if let Representation::Dense(a) = &self.representation {
            return Ok(a.clone());
        }
        checked_entries(self.nrows(), self.ncols())?;
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        for slot in 0..self.k {
            out += kron_chain(&self.term_factors(slot));
        }
        Ok(out)
    }

    /// Switch to the assembled representation.
    pub fn into_dense(mut self) -> Result<Self> {
        let a = self.assemble()?;
        self.representation = Representation::Dense(a);
        Ok(self)
    }
}

/// `[A ⊗ I ⊗ … ⊗ I,  B ⊗ A ⊗ I ⊗ … ⊗ I,  …,  B ⊗ … ⊗ B ⊗ A]`.
#[derive(Debug, Clone)]
pub struct BlockKroneckerMatrix {
    pub a: DMatrix<f64>,
    /// `None` means the `n₁ × n₁` identity.
    pub b: Option<DMatrix<f64>>,
    pub k: usize,
    identity: DMatrix<f64>,
}

pub fn build_mk(a: &DMatrix<f64>, b: Option<&DMatrix<f64>>, k: usize) -> Result<BlockKroneckerMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("block Kronecker matrix needs k ≥ 1".into()));
    }
    let n1 = a.nrows();
    if let Some(b) = b {
        if b.nrows() != n1 {
            return Err(Error::Dimension(format!(
                "B must have {n1} rows to match A, got {}",
                b.nrows()
            )));
        }
    }
    Ok(BlockKroneckerMatrix {
        a: a.clone(),
        b: b.cloned(),
        k,
        identity: DMatrix::identity(n1, n1),
    })
}

impl BlockKroneckerMatrix {
    fn b_ref(&self) -> &DMatrix<f64> {
        self.b.as_ref().unwrap_or(&self.identity)
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows().pow(self.k as u32)
    }

    /// Kronecker factors of block `i` (0-based).
    pub fn block_factors(&self, i: usize) -> Vec<&DMatrix<f64>> {
        (0..self.k)
            .map(|j| match j.cmp(&i) {
                std::cmp::Ordering::Less => self.b_ref(),
                std::cmp::Ordering::Equal => &self.a,
                std::cmp::Ordering::Greater => &self.identity,
            })
            .collect()
    }

    pub fn block_cols(&self, i: usize) -> usize {
        self.block_factors(i).iter().map(|f| f.ncols()).product()
    }

    pub fn ncols(&self) -> usize {
        (0..self.k).map(|i| self.block_cols(i)).sum()
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "block Kronecker matrix expects length {}, got {}",
                self.ncols(),
                v.len()
            )));
        }
        let mut out = DVector::zeros(self.nrows());
        let mut offset = 0;
        for i in 0..self.k {
            let c = self.block_cols(i);
            out += kron_apply_unchecked(&self.block_factors(i), &v.as_slice()[offset..offset + c]);
            offset += c;
        }
        Ok(out)
    }

    pub fn apply_transpose(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.nrows() {
            return Err(Error::Dimension(format!(
                "block Kronecker transpose expects length {}, got {}",
                self.nrows(),
                y.len()
            )));
        }
        let mut out = Vec::with_capacity(self.ncols());
        for i in 0..self.k {
            let transposed: Vec<DMatrix<f64>> = self.block_factors(i).iter().map(|f| f.transpose()).collect();
            let refs: Vec<&DMatrix<f64>> = transposed.iter().collect();
            out.extend_from_slice(kron_apply_unchecked(&refs, y.as_slice()).as_slice());
        }
        Ok(DVector::from_vec(out))
    }

    pub fn assemble(&self) -> Result<DMatrix<f64>> {
        checked_entries(self.nrows(), self.ncols())?;
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        let mut offset = 0;
        for i in 0..self.k {
            let block = kron_chain(&self.block_factors(i));
            out.view_mut((0, offset), (block.nrows(), block.ncols())).copy_from(&block);
            offset += block.ncols();
        }
        Ok(out)
    }
}

/// Coefficient vector of order `k` invariant under permutations of its
/// Kronecker slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCoefficient {
    pub n: usize,
    pub k: usize,
    pub data: DVector<f64>,
}

pub fn symmetrize_coeff(v: &DVector<f64>, n: usize, k: usize) -> Result<SymmetricCoefficient> {
    let expected = n.checked_pow(k as u32).unwrap_or(usize::MAX);
    if k == 0 || v.len() != expected {
        return Err(Error::Dimension(format!(
            "coefficient of length {} is not {n}^{k}",
            v.len()
        )));
    }
    Ok(SymmetricCoefficient {
        n,
        k,
        data: symmetrize(v, n, k),
    })
}

/// Averages every entry over its orbit under slot permutations.
///
/// Each permutation class is identified by its sorted multi-index, so the
/// cost is `O(n^k · k log k)` instead of `O(n^k · k!)`.
pub(crate) fn symmetrize(v: &DVector<f64>, n: usize, k: usize) -> DVector<f64> {
    if k <= 1 {
        return v.clone();
    }
    let len = v.len();
    let mut classes: Vec<usize> = Vec::with_capacity(len);
    let mut sums: HashMap<usize, (f64, u32)> = HashMap::new();
    let mut idx = vec![0usize; k];
    let mut sorted = vec![0usize; k];
    for (lin, &val) in v.iter().enumerate() {
        sorted.copy_from_slice(&idx);
        sorted.sort_unstable();
        let canon = linear_index(&sorted, n);
        classes.push(canon);
        let e = sums.entry(canon).or_insert((0.0, 0));
        e.0 += val;
        e.1 += 1;
        // advance the multi-index (last slot fastest)
        if lin + 1 < len {
            let mut s = k - 1;
            loop {
                idx[s] += 1;
                if idx[s] < n {
                    break;
                }
                idx[s] = 0;
                s -= 1;
            }
        }
    }
    DVector::from_iterator(
        len,
        classes.iter().map(|c| {
            let (s, cnt) = sums[c];
            s / cnt as f64
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn kron_power_examples() {
        let p = kron_power(&dv(&[1.0, 2.0]), 2).unwrap();
        assert_eq!(p.data.as_slice(), &[1.0, 2.0, 2.0, 4.0]);
        let x = dv(&[0.3, -1.2, 4.0]);
        assert_eq!(kron_power(&x, 1).unwrap().data, x);
        let p = kron_power(&dv(&[1.0, -1.0]), 3).unwrap();
        assert_eq!(p.data.as_slice(), &[1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0]);
        assert!(kron_power(&x, 0).is_err());
    }

    #[test]
    fn kron_apply_identity_and_scalar() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let v = dv(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(kron_apply(&[&i2, &i2], &v).unwrap(), v);
        let two = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(kron_apply(&[&two], &dv(&[3.0])).unwrap()[0], 6.0);
        assert!(kron_apply(&[&i2, &i2], &dv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn kron_apply_matches_vec_identity() {
        // (A ⊗ B) vec(X) = vec(B X Aᵀ)
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let b = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, -0.7, 2.0]);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let lhs = kron_apply(&[&a, &b], &vec_of(&x)).unwrap();
        let rhs = vec_of(&(&b * &x * a.transpose()));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
        let dense = a.kronecker(&b) * vec_of(&x);
        assert_relative_eq!(lhs, dense, epsilon = 1e-14);
    }

    #[test]
    fn lk_examples() {
        let m = DMatrix::from_element(1, 1, 2.0);
        let e = DMatrix::from_element(1, 1, 3.0);
        let op = build_lk(&m, Some(&e), 3).unwrap();
        assert_eq!(op.assemble().unwrap()[(0, 0)], 54.0);

        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(build_lk(&m, None, 1).unwrap().assemble().unwrap(), m);

        let i2 = DMatrix::<f64>::identity(2, 2);
        let op = build_lk(&i2, Some(&i2), 2).unwrap();
        assert_eq!(op.assemble().unwrap(), DMatrix::identity(4, 4) * 2.0);
        assert!(build_lk(&i2, None, 0).is_err());
    }

    #[test]
    fn lk_shape_and_dense_switch() {
        let m = DMatrix::from_fn(3, 2, |i, j| (i as f64) - 0.5 * j as f64);
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.1, 0.9]);
        let op = build_lk(&m, Some(&e), 3).unwrap();
        assert_eq!((op.nrows(), op.ncols()), (12, 8));
        let a = op.assemble().unwrap();
        assert_eq!(a.shape(), (12, 8));
        let v = DVector::from_fn(8, |i, _| (i as f64 * 0.37).sin());
        let dense = op.clone().into_dense().unwrap();
        assert_relative_eq!(op.apply(&v).unwrap(), dense.apply(&v).unwrap(), epsilon = 1e-13);
    }

    #[test]
    fn mk_examples() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let mk = build_mk(&a, None, 1).unwrap();
        assert_eq!(mk.assemble().unwrap(), a);

        let mk = build_mk(&a, None, 2).unwrap();
        let i2 = DMatrix::<f64>::identity(2, 2);
        let expected = {
            let b1 = a.kronecker(&i2);
            let b2 = i2.kronecker(&a);
            let mut m = DMatrix::zeros(4, 4);
            m.view_mut((0, 0), (4, 2)).copy_from(&b1);
            m.view_mut((0, 2), (4, 2)).copy_from(&b2);
            m
        };
        let assembled = mk.assemble().unwrap();
        assert_eq!(assembled, expected);
        assert_eq!(assembled.rank(1e-10), 3);
    }

    #[test]
    fn mk_transpose_apply_matches_assembly() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let mk = build_mk(&a, Some(&b), 3).unwrap();
        let dense = mk.assemble().unwrap();
        assert_eq!(dense.ncols(), mk.ncols());
        let y = DVector::from_fn(27, |i, _| (i as f64).cos());
        assert_relative_eq!(mk.apply_transpose(&y).unwrap(), dense.transpose() * &y, epsilon = 1e-12);
        let v = DVector::from_fn(mk.ncols(), |i, _| (i as f64 * 0.3).sin());
        assert_relative_eq!(mk.apply(&v).unwrap(), &dense * &v, epsilon = 1e-12);
    }

    #[test]
    fn symmetrize_examples() {
        let s = symmetrize_coeff(&dv(&[0.0, 0.0, 1.0, 0.0]), 2, 2).unwrap();
        assert_eq!(s.data.as_slice(), &[0.0, 0.5, 0.5, 0.0]);
        let sym = dv(&[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(symmetrize_coeff(&sym, 2, 2).unwrap().data, sym);
        assert!(symmetrize_coeff(&dv(&[1.0, 2.0, 3.0]), 2, 2).is_err());
    }

    #[test]
    fn perfect_powers() {
        assert_eq!(perfect_power_order(27, 3), Some(3));
        assert_eq!(perfect_power_order(26, 3), None);
        assert_eq!(perfect_power_order(1, 1), Some(1));
    }

    fn brute_power_entry(x: &[f64], idx: &[usize]) -> f64 {
        idx.iter().map(|&i| x[i]).product()
    }

    fn all_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..k {
            out = out
                .into_iter()
                .flat_map(|p| (0..n).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                }))
                .collect();
        }
        out
    }

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn kron_power_matches_nested_products(
            n in 1usize..=4, k in 1usize..=4,
            seed in prop::collection::vec(-2.0f64..2.0, 4)
        ) {
            let x = &seed[..n];
            let p = kron_power(&dv(x), k).unwrap();
            for idx in all_indices(n, k) {
                prop_assert!((p.entry(&idx) - brute_power_entry(x, &idx)).abs() <= 1e-14);
            }
        }

        #[test]
        fn lk_factored_apply_matches_assembly(
            n in 1usize..=4, k in 1usize..=3, q in 1usize..=3,
            vals in prop::collection::vec(-1.0f64..1.0, 64 + 16 + 16)
        ) {
            let m = DMatrix::from_fn(q, n, |i, j| vals[i * n + j]);
            let e = DMatrix::from_fn(n, n, |i, j| vals[16 + i * n + j] + if i == j { 1.0 } else { 0.0 });
            let op = build_lk(&m, Some(&e), k).unwrap();
            let len = op.ncols();
            let v = DVector::from_fn(len, |i, _| vals[32 + i % 64]);
            let fast = op.apply(&v).unwrap();
            let dense = op.assemble().unwrap() * &v;
            let scale = dense.norm().max(1e-300);
            prop_assert!((fast - dense).norm() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn symmetrization_preserves_polynomial_and_is_idempotent(
            n in 1usize..=3, k in 1usize..=4,
            vals in prop::collection::vec(-1.0f64..1.0, 81),
            xs in prop::collection::vec(-1.5f64..1.5, 3)
        ) {
            let len = n.pow(k as u32);
            let v = DVector::from_fn(len, |i, _| vals[i]);
            let x = dv(&xs[..n]);
            let s = symmetrize_coeff(&v, n, k).unwrap().data;
            let px = kron_power(&x, k).unwrap().data;
            prop_assert!((v.dot(&px) - s.dot(&px)).abs() <= 1e-12);
            let ss = symmetrize(&s, n, k);
            prop_assert!((ss - &s).norm() <= 1e-14);
            // brute-force k! permutation average
            if k <= 3 {
                let perms = permutations(k);
                for idx in all_indices(n, k) {
                    let avg: f64 = perms.iter().map(|p| {
                        let permuted: Vec<usize> = p.iter().map(|&j| idx[j]).collect();
                        v[linear_index(&permuted, n)]
                    }).sum::<f64>() / perms.len() as f64;
                    prop_assert!((avg - s[linear_index(&idx, n)]).abs() <= 1e-14);
                }
            }
        }

        #[test]
        fn symmetrization_is_linear(
            vals in prop::collection::vec(-1.0f64..1.0, 54), alpha in -2.0f64..2.0
        ) {
            let a = DVector::from_fn(27, |i, _| vals[i]);
            let b = DVector::from_fn(27, |i, _| vals[27 + i]);
            let lhs = symmetrize(&(&a * alpha + &b), 3, 3);
            let rhs = symmetrize(&a, 3, 3) * alpha + symmetrize(&b, 3, 3);
            prop_assert!((lhs - rhs).norm() <= 1e-13);
        }
    }
}
