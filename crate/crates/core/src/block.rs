//! Dense block arithmetic, block LU and the sequential block-Thomas sweep.
//!
//! A block-tridiagonal operator is stored with the unsigned blocks `A`, `B`,
//! `C`; the assembled operator of block row `j` is
//! `-A_j X_{j-1} + C_j X_j - B_j X_{j+1}`.

use std::cell::Cell;
use std::ops::{Index, IndexMut};

use crate::error::{mismatch, Error, Result};

/// Relative pivot threshold used by [`lu_factor`].
pub const SINGULAR_TOL: f64 = 1e-13;

/// Default cap on `N*M` for [`BlockTriMatrix::dense_expand`].
pub const ORACLE_CAP: usize = 4096;

thread_local! {
    static FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of block LU factorizations performed on the current thread,
/// including work it handed to the rayon pool.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.with(|c| c.get())
}

pub fn reset_factorization_count() {
    FACTORIZATIONS.with(|c| c.set(0));
}

/// Run `f` and return its result with the factorizations it performed on
/// this thread. Pool workers report the count back to the caller through
/// [`add_factorizations`].
pub(crate) fn counted<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = factorization_count();
    let out = f();
    (out, factorization_count() - before)
}

pub(crate) fn add_factorizations(n: u64) {
    FACTORIZATIONS.with(|c| c.set(c.get() + n));
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A square `M x M` block of a block-tridiagonal matrix.
pub type DenseBlock = Matrix;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Self {
        Matrix { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `y += self * x`.
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(self.cols, x.len());
        assert_eq!(self.rows, y.len());
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += self.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Copy of the sub-matrix starting at `(r0, c0)`.
    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factors of one square block with row pivoting, `P A = L U`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLU {
    m: usize,
    /// Unit-lower `L` below the diagonal, `U` on and above it.
    lu: Vec<f64>,
    /// `perm[i]` is the original row placed at row `i`.
    perm: Vec<usize>,
}

/// Factor a block with partial pivoting.
///
/// Fails with [`Error::SingularBlock`] when a pivot falls below
/// `SINGULAR_TOL * ||block||_inf`.
pub fn lu_factor(block: &DenseBlock) -> Result<BlockLU> {
    if !block.is_square() {
        return Err(mismatch(format!("lu of a {}x{} block", block.rows, block.cols)));
    }
    if !block.is_finite() {
        return Err(Error::InvalidParameter("block has non-finite entries".into()));
    }
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    let m = block.rows;
    let threshold = SINGULAR_TOL * block.norm_inf();
    let mut lu = block.data.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    for k in 0..m {
        let (p, pmax) = (k..m)
            .map(|i| (i, lu[i * m + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= threshold || pmax == 0.0 {
            return Err(Error::SingularBlock { pivot: pmax, threshold });
        }
        if p != k {
            for j in 0..m {
                lu.swap(k * m + j, p * m + j);
            }
            perm.swap(k, p);
        }
        let piv = lu[k * m + k];
        for i in k + 1..m {
            let l = lu[i * m + k] / piv;
            lu[i * m + k] = l;
            if l != 0.0 {
                for j in k + 1..m {
                    lu[i * m + j] -= l * lu[k * m + j];
                }
            }
        }
    }
    Ok(BlockLU { m, lu, perm })
}

impl BlockLU {
    pub fn order(&self) -> usize {
        self.m
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn packed(&self) -> &[f64] {
        &self.lu
    }

    /// Rebuild from packed factors and permutation, as written by [`BlockLU::packed`].
    pub fn from_parts(m: usize, lu: Vec<f64>, perm: Vec<usize>) -> Result<Self> {
        if lu.len() != m * m || perm.len() != m {
            return Err(Error::Format("LU payload has wrong length".into()));
        }
        let mut seen = vec![false; m];
        for &p in &perm {
            if p >= m || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Format("LU permutation is not a bijection".into()));
            }
        }
        Ok(BlockLU { m, lu, perm })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = self.m;
        debug_assert_eq!(x.len(), m);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| x[p]).collect();
        for i in 0..m {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[i * m + j] * y[j];
            }
            y[i] = s;
        }
        for i in (0..m).rev() {
            let mut s = y[i];
            for j in i + 1..m {
                s -= self.lu[i * m + j] * y[j];
            }
            y[i] = s / self.lu[i * m + i];
        }
        x.copy_from_slice(&y);
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.m {
            return Err(mismatch(format!("rhs length {} for block order {}", rhs.len(), self.m)));
        }
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    /// Solve for an `M x k` right-hand side.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if rhs.rows != self.m {
            return Err(mismatch(format!("rhs has {} rows, block order {}", rhs.rows, self.m)));
        }
        // row-oriented substitution; per entry the same operation order as
        // `solve_in_place`
        let (m, k) = (self.m, rhs.cols);
        let mut y = vec![0.0; m * k];
        for (i, &p) in self.perm.iter().enumerate() {
            y[i * k..(i + 1) * k].copy_from_slice(&rhs.data[p * k..(p + 1) * k]);
        }
        for i in 0..m {
            let (done, rest) = y.split_at_mut(i * k);
            let row = &mut rest[..k];
            for j in 0..i {
                let l = self.lu[i * m + j];
                for (a, b) in row.iter_mut().zip(&done[j * k..(j + 1) * k]) {
                    *a -= l * b;
                }
            }
        }
        for i in (0..m).rev() {
            let (head, tail) = y.split_at_mut((i + 1) * k);
            let row = &mut head[i * k..];
            for j in i + 1..m {
                let u = self.lu[i * m + j];
                for (a, b) in row.iter_mut().zip(&tail[(j - i - 1) * k..(j - i) * k]) {
                    *a -= u * b;
                }
            }
            let d = self.lu[i * m + i];
            row.iter_mut().for_each(|a| *a /= d);
        }
        Matrix::new(m, k, y)
    }

    /// `P^T L U`, which reproduces the factored block.
    pub fn reconstruct(&self) -> Matrix {
        let m = self.m;
        let l = Matrix::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lu[i * m + j],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        });
        let u = Matrix::from_fn(m, m, |i, j| if j >= i { self.lu[i * m + j] } else { 0.0 });
        let pa = l.matmul(&u);
        let mut a = Matrix::zeros(m, m);
        for (i, &p) in self.perm.iter().enumerate() {
            for j in 0..m {
                a[(p, j)] = pa[(i, j)];
            }
        }
        a
    }
}

/// Convenience wrapper matching the free-function form of the factorization API.
pub fn lu_solve(fact: &BlockLU, rhs: &Matrix) -> Result<Matrix> {
    fact.solve(rhs)
}

/// Block vector with `n` parts of length `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    m: usize,
    parts: Vec<Vec<f64>>,
}

impl BlockVector {
    pub fn new(parts: Vec<Vec<f64>>) -> Result<Self> {
        let m = parts.first().map(Vec::len).unwrap_or(0);
        if parts.is_empty() || m == 0 {
            return Err(mismatch("block vector needs n >= 1 and m >= 1"));
        }
        if parts.iter().any(|p| p.len() != m) {
            return Err(mismatch("block vector parts differ in length"));
        }
        Ok(BlockVector { m, parts })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        BlockVector { m, parts: vec![vec![0.0; m]; n] }
    }

    pub fn from_flat(n: usize, m: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != n * m || n == 0 || m == 0 {
            return Err(mismatch(format!("{} values for {n} blocks of {m}", flat.len())));
        }
        Ok(BlockVector { m, parts: flat.chunks(m).map(<[f64]>::to_vec).collect() })
    }

    pub fn n(&self) -> usize {
        self.parts.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn parts(&self) -> &[Vec<f64>] {
        &self.parts
    }

    pub fn part(&self, j: usize) -> &[f64] {
        &self.parts[j]
    }

    pub fn part_mut(&mut self, j: usize) -> &mut Vec<f64> {
        &mut self.parts[j]
    }

    pub fn into_parts(self) -> Vec<Vec<f64>> {
        self.parts
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.parts.concat()
    }

    pub fn norm_inf(&self) -> f64 {
        self.parts.iter().flatten().fold(0.0, |a, x| a.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &BlockVector) -> f64 {
        self.parts
            .iter()
            .flatten()
            .zip(other.parts.iter().flatten())
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

/// Block-tridiagonal matrix of `n` block rows with `m x m` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTriMatrix {
    m: usize,
    diag: Vec<DenseBlock>,
    /// `A_2..A_N`; `lower[j-1]` couples row `j` to row `j-1` (0-based `j`).
    lower: Vec<DenseBlock>,
    /// `B_1..B_{N-1}`; `upper[j]` couples row `j` to row `j+1`.
    upper: Vec<DenseBlock>,
}

impl BlockTriMatrix {
    pub fn new(diag: Vec<DenseBlock>, lower: Vec<DenseBlock>, upper: Vec<DenseBlock>) -> Result<Self> {
        let n = diag.len();
        if n == 0 {
            return Err(mismatch("block-tridiagonal matrix needs at least one block row"));
        }
        if lower.len() != n - 1 || upper.len() != n - 1 {
            return Err(mismatch(format!(
                "{n} diagonal blocks need {} off-diagonal blocks, got {} lower and {} upper",
                n - 1,
                lower.len(),
                upper.len()
            )));
        }
        let m = diag[0].rows();
        if m == 0 {
            return Err(mismatch("block order must be at least 1"));
        }
        for b in diag.iter().chain(&lower).chain(&upper) {
            if b.rows() != m || b.cols() != m {
                return Err(mismatch(format!("block {}x{} in a matrix of order {m}", b.rows(), b.cols())));
            }
            if !b.is_finite() {
                return Err(Error::InvalidParameter("non-finite block entry".into()));
            }
        }
        Ok(BlockTriMatrix { m, diag, lower, upper })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        BlockTriMatrix {
            m,
            diag: vec![Matrix::identity(m); n],
            lower: vec![Matrix::zeros(m, m); n.saturating_sub(1)],
            upper: vec![Matrix::zeros(m, m); n.saturating_sub(1)],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `C_j`, 0-based.
    pub fn diag(&self, j: usize) -> &DenseBlock {
        &self.diag[j]
    }

    /// `A_j` coupling row `j` to `j-1`, 0-based, `j >= 1`.
    pub fn lower(&self, j: usize) -> &DenseBlock {
        &self.lower[j - 1]
    }

    /// `B_j` coupling row `j` to `j+1`, 0-based, `j < n-1`.
    pub fn upper(&self, j: usize) -> &DenseBlock {
        &self.upper[j]
    }

    pub fn diags(&self) -> &[DenseBlock] {
        &self.diag
    }

    pub fn lowers(&self) -> &[DenseBlock] {
        &self.lower
    }

    pub fn uppers(&self) -> &[DenseBlock] {
        &self.upper
    }

    /// Rows `lo..hi` (0-based, half open) as an independent matrix.
    pub fn slice(&self, lo: usize, hi: usize) -> BlockTriMatrix {
        assert!(lo < hi && hi <= self.n());
        BlockTriMatrix {
            m: self.m,
            diag: self.diag[lo..hi].to_vec(),
            lower: self.lower[lo..hi - 1].to_vec(),
            upper: self.upper[lo..hi - 1].to_vec(),
        }
    }

    pub fn transpose(&self) -> BlockTriMatrix {
        // (P^T) row j: lower = B_{j-1}^T, upper = A_{j+1}^T.
        BlockTriMatrix {
            m: self.m,
            diag: self.diag.iter().map(Matrix::transpose).collect(),
            lower: self.upper.iter().map(Matrix::transpose).collect(),
            upper: self.lower.iter().map(Matrix::transpose).collect(),
        }
    }

    /// `P x` with the signed operator.
    pub fn apply(&self, x: &BlockVector) -> Result<BlockVector> {
        if x.n() != self.n() || x.m() != self.m {
            return Err(mismatch("vector does not match matrix"));
        }
        let n = self.n();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let mut y = self.diag[j].matvec(x.part(j));
            if j > 0 {
                let a = self.lower(j).matvec(x.part(j - 1));
                y.iter_mut().zip(a).for_each(|(y, a)| *y -= a);
            }
            if j + 1 < n {
                let b = self.upper(j).matvec(x.part(j + 1));
                y.iter_mut().zip(b).for_each(|(y, b)| *y -= b);
            }
            out.push(y);
        }
        Ok(BlockVector { m: self.m, parts: out })
    }

    /// `||P x - f||_inf`.
    pub fn residual_inf(&self, x: &BlockVector, f: &BlockVector) -> Result<f64> {
        Ok(self.apply(x)?.max_abs_diff(f))
    }

    /// Materialize the full `NM x NM` operator; test-scale only.
    pub fn dense_expand(&self) -> Result<Matrix> {
        self.dense_expand_capped(ORACLE_CAP)
    }

    pub fn dense_expand_capped(&self, cap: usize) -> Result<Matrix> {
        let (n, m) = (self.n(), self.m);
        if n * m > cap {
            return Err(Error::OracleTooLarge { size: n * m, cap });
        }
        let mut d = Matrix::zeros(n * m, n * m);
        let mut put = |bi: usize, bj: usize, blk: &Matrix, sign: f64| {
            for i in 0..m {
                for j in 0..m {
                    d[(bi * m + i, bj * m + j)] = sign * blk[(i, j)];
                }
            }
        };
        for j in 0..n {
            put(j, j, &self.diag[j], 1.0);
            if j > 0 {
                put(j, j - 1, &self.lower[j - 1], -1.0);
            }
            if j + 1 < n {
                put(j, j + 1, &self.upper[j], -1.0);
            }
        }
        Ok(d)
    }

    /// Stable 64-bit FNV-1a digest of the dimensions and every block entry.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.n() as u64);
        h.write_u64(self.m as u64);
        for b in self.diag.iter().chain(&self.lower).chain(&self.upper) {
            for x in b.data() {
                h.write_u64(x.to_bits());
            }
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Forward-elimination factors of the block-Thomas sweep.
///
/// `D_1 = C_1`, `D_i = C_i - A_i D_{i-1}^{-1} B_{i-1}`, and `G_i = D_i^{-1} B_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThomasFactorization {
    fingerprint: u64,
    n: usize,
    m: usize,
    pivots: Vec<BlockLU>,
    /// `G_i`, one per block row except the last.
    gains: Vec<Matrix>,
    /// `A_i`, kept so the forward sweep needs no source matrix.
    lower: Vec<Matrix>,
}

pub fn thomas_factor(p: &BlockTriMatrix) -> Result<ThomasFactorization> {
    let (n, m) = (p.n(), p.m());
    let mut pivots = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n.saturating_sub(1));
    let mut d = p.diag(0).clone();
    for i in 0..n {
        if i > 0 {
            d = p.diag(i).sub(&p.lower(i).matmul(&gains[i - 1]));
        }
        let lu = lu_factor(&d).map_err(|e| match e {
            Error::SingularBlock { .. } => Error::SingularPivot(i + 1),
            other => other,
        })?;
        if i + 1 < n {
            gains.push(lu.solve(p.upper(i))?);
        }
        pivots.push(lu);
    }
    Ok(ThomasFactorization {
        fingerprint: p.fingerprint(),
        n,
        m,
        pivots,
        gains,
        lower: p.lowers().to_vec(),
    })
}

impl ThomasFactorization {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matches(&self, p: &BlockTriMatrix) -> bool {
        self.n == p.n() && self.m == p.m() && self.fingerprint == p.fingerprint()
    }

    pub fn pivots(&self) -> &[BlockLU] {
        &self.pivots
    }

    pub fn gains(&self) -> &[Matrix] {
        &self.gains
    }

    pub fn lowers(&self) -> &[Matrix] {
        &self.lower
    }

    /// Reassemble from serialized parts.
    pub fn from_parts(
        fingerprint: u64,
        pivots: Vec<BlockLU>,
        gains: Vec<Matrix>,
        lower: Vec<Matrix>,
    ) -> Result<Self> {
        let n = pivots.len();
        if n == 0 || gains.len() + 1 != n || lower.len() + 1 != n {
            return Err(Error::Format("Thomas factor part counts are inconsistent".into()));
        }
        let m = pivots[0].order();
        if pivots.iter().any(|p| p.order() != m)
            || gains.iter().chain(&lower).any(|g| g.rows() != m || g.cols() != m)
        {
            return Err(Error::Format("Thomas factor blocks differ in order".into()));
        }
        Ok(ThomasFactorization { fingerprint, n, m, pivots, gains, lower })
    }

    pub fn solve(&self, f: &BlockVector) -> Result<BlockVector> {
        if f.n() != self.n || f.m() != self.m {
            return Err(mismatch(format!(
                "rhs {}x{} against factorization {}x{}",
                f.n(),
                f.m(),
                self.n,
                self.m
            )));
        }
        let mut y: Vec<Vec<f64>> = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut r = f.part(i).to_vec();
            if i > 0 {
                self.lower[i - 1].matvec_add(&y[i - 1], &mut r);
            }
            self.pivots[i].solve_in_place(&mut r);
            y.push(r);
        }
        for i in (0..self.n - 1).rev() {
            let (head, tail) = y.split_at_mut(i + 1);
            self.gains[i].matvec_add(&tail[0], &mut head[i]);
        }
        Ok(BlockVector { m: self.m, parts: y })
    }

    /// Solve with a block right-hand side whose parts are `M x k` matrices.
    pub fn solve_columns(&self, f: &[Matrix]) -> Result<Vec<Matrix>> {
        if f.len() != self.n || f.iter().any(|b| b.rows() != self.m) {
            return Err(mismatch("block rhs does not match factorization"));
        }
        let k = f[0].cols();
        if f.iter().any(|b| b.cols() != k) {
            return Err(mismatch("block rhs parts differ in column count"));
        }
        let mut y: Vec<Matrix> = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut r = f[i].clone();
            if i > 0 {
                r = r.add(&self.lower[i - 1].matmul(&y[i - 1]));
            }
            y.push(self.pivots[i].solve(&r)?);
        }
        for i in (0..self.n - 1).rev() {
            let g = self.gains[i].matmul(&y[i + 1]);
            y[i] = y[i].add(&g);
        }
        Ok(y)
    }
}

pub fn thomas_solve(fact: &ThomasFactorization, f: &BlockVector) -> Result<BlockVector> {
    fact.solve(f)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Independent dense Gaussian elimination with full pivoting, test use only.
    use super::Matrix;

    pub fn dense_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
        let n = a.rows();
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        let mut colperm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut best = (k, k, 0.0);
            for i in k..n {
                for j in k..n {
                    if aug[i][j].abs() > best.2 {
                        best = (i, j, aug[i][j].abs());
                    }
                }
            }
            aug.swap(k, best.0);
            if best.1 != k {
                for row in aug.iter_mut() {
                    row.swap(k, best.1);
                }
                colperm.swap(k, best.1);
            }
            for i in k + 1..n {
                let l = aug[i][k] / aug[k][k];
                for j in k..=n {
                    aug[i][j] -= l * aug[k][j];
                }
            }
        }
        let mut y = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = aug[i][n];
            for j in i + 1..n {
                s -= aug[i][j] * y[j];
            }
            y[i] = s / aug[i][i];
        }
        let mut x = vec![0.0; n];
        for (i, &c) in colperm.iter().enumerate() {
            x[c] = y[i];
        }
        x
    }
}


#[cfg(test)]
mod tests {
    use super::oracle::dense_solve;
    use super::testgen::*;
    use super::*;

    #[test]
    fn lu_identity_has_unit_pivots() {
        let lu = lu_factor(&Matrix::identity(3)).unwrap();
        assert_eq!(lu.perm(), &[0, 1, 2]);
        for i in 0..3 {
            assert_eq!(lu.packed()[i * 3 + i], 1.0);
        }
    }

    #[test]
    fn lu_reconstructs_dominant_block() {
        let mut r = rng(1);
        let mut a = random_block(&mut r, 4);
        for i in 0..4 {
            a[(i, i)] += 5.0;
        }
        let lu = lu_factor(&a).unwrap();
        let err = lu.reconstruct().sub(&a).max_abs();
        assert!(err <= 1e-12, "reconstruction error {err}");
    }

    #[test]
    fn lu_rejects_zero_and_rank_deficient() {
        assert!(matches!(lu_factor(&Matrix::zeros(3, 3)), Err(Error::SingularBlock { .. })));
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(lu_factor(&a), Err(Error::SingularBlock { .. })));
    }

    #[test]
    fn lu_solve_cases() {
        let lu = lu_factor(&Matrix::identity(3)).unwrap();
        assert_eq!(lu.solve_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let d = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let x = lu_solve(&lu_factor(&d).unwrap(), &Matrix::column(&[2.0, 4.0])).unwrap();
        assert_eq!(x.data(), &[1.0, 1.0]);
        assert!(matches!(lu.solve(&Matrix::zeros(2, 1)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn lu_solve_matches_oracle() {
        let mut r = rng(2);
        let a = random_block(&mut r, 5).add(&Matrix::identity(5).scale(3.0));
        let b: Vec<f64> = (0..5).map(|i| (i as f64).sin()).collect();
        let x = lu_factor(&a).unwrap().solve_vec(&b).unwrap();
        let y = dense_solve(&a, &b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() <= 1e-10);
        }
        let res = a.matvec(&x).iter().zip(&b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        assert!(res <= 1e-10 * 1.0);
    }

    #[test]
    fn dense_expand_small_cases() {
        let c = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = BlockTriMatrix::new(vec![c.clone()], vec![], vec![]).unwrap();
        assert_eq!(p.dense_expand().unwrap(), c);

        let one = |v: f64| Matrix::new(1, 1, vec![v]).unwrap();
        let p = BlockTriMatrix::new(vec![one(2.0), one(2.0)], vec![one(1.0)], vec![one(1.0)]).unwrap();
        assert_eq!(p.dense_expand().unwrap().data(), &[2.0, -1.0, -1.0, 2.0]);
    }

    #[test]
    fn dense_expand_symmetry_and_band() {
        let mut r = rng(3);
        let (n, m) = (4, 3);
        let upper: Vec<_> = (1..n).map(|_| random_block(&mut r, m)).collect();
        let lower: Vec<_> = upper.iter().map(Matrix::transpose).collect();
        let diag: Vec<_> = (0..n)
            .map(|_| {
                let b = random_block(&mut r, m);
                b.add(&b.transpose())
            })
            .collect();
        let p = BlockTriMatrix::new(diag, lower, upper).unwrap();
        let d = p.dense_expand().unwrap();
        assert_eq!(d, d.transpose());

        let q = dominant(&mut r, n, m);
        let dq = q.dense_expand().unwrap();
        assert_ne!(dq, dq.transpose());
        for i in 0..n * m {
            for j in 0..n * m {
                if (i / m).abs_diff(j / m) > 1 {
                    assert_eq!(dq[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn dense_expand_respects_cap() {
        let p = BlockTriMatrix::identity(10, 10);
        assert!(matches!(p.dense_expand_capped(50), Err(Error::OracleTooLarge { .. })));
    }

    #[test]
    fn thomas_block_diagonal_is_per_block_lu() {
        let mut r = rng(4);
        let diag: Vec<_> =
            (0..3).map(|_| random_block(&mut r, 2).add(&Matrix::identity(2).scale(4.0))).collect();
        let z = Matrix::zeros(2, 2);
        let p = BlockTriMatrix::new(diag.clone(), vec![z.clone(); 2], vec![z; 2]).unwrap();
        let f = thomas_factor(&p).unwrap();
        for (lu, c) in f.pivots().iter().zip(&diag) {
            assert_eq!(lu, &lu_factor(c).unwrap());
        }
    }

    #[test]
    fn thomas_scalar_matches_classical_sweep() {
        let n = 12;
        let a: Vec<f64> = (0..n).map(|i| 0.3 + 0.01 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 0.5 - 0.02 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * i as f64).collect();
        let d: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        // classical Thomas on  -a x_{i-1} + c x_i - b x_{i+1} = d
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = -b[0] / c[0];
        dp[0] = d[0] / c[0];
        for i in 1..n {
            let den = c[i] + a[i] * cp[i - 1];
            cp[i] = -b[i] / den;
            dp[i] = (d[i] + a[i] * dp[i - 1]) / den;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        let one = |v: f64| Matrix::new(1, 1, vec![v]).unwrap();
        let p = BlockTriMatrix::new(
            c.iter().map(|&v| one(v)).collect(),
            a[1..].iter().map(|&v| one(v)).collect(),
            b[..n - 1].iter().map(|&v| one(v)).collect(),
        )
        .unwrap();
        let f = BlockVector::from_flat(n, 1, &d).unwrap();
        let y = thomas_factor(&p).unwrap().solve(&f).unwrap().to_flat();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn thomas_dominant_large_and_identity() {
        let mut r = rng(5);
        let p = dominant(&mut r, 32, 6);
        assert!(thomas_factor(&p).is_ok());

        let id = BlockTriMatrix::identity(5, 3);
        let f = random_vector(&mut r, 5, 3);
        assert_eq!(thomas_factor(&id).unwrap().solve(&f).unwrap(), f);
        let zero = BlockVector::zeros(5, 3);
        assert!(thomas_factor(&id).unwrap().solve(&zero).unwrap().norm_inf() == 0.0);
    }

    #[test]
    fn thomas_matches_dense_oracle() {
        let mut r = rng(6);
        let p = dominant(&mut r, 16, 4);
        let f = random_vector(&mut r, 16, 4);
        let x = thomas_factor(&p).unwrap().solve(&f).unwrap();
        let y = dense_solve(&p.dense_expand().unwrap(), &f.to_flat());
        let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = x.to_flat().iter().zip(&y).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        assert!(err <= 1e-9 * scale);
        assert!(p.residual_inf(&x, &f).unwrap() <= 1e-9 * f.norm_inf());
    }

    #[test]
    fn thomas_singular_pivot_reports_row() {
        let one = |v: f64| Matrix::new(1, 1, vec![v]).unwrap();
        // second pivot: 1 - 1*1/1 = 0
        let p = BlockTriMatrix::new(vec![one(1.0), one(1.0)], vec![one(1.0)], vec![one(1.0)]).unwrap();
        assert!(matches!(thomas_factor(&p), Err(Error::SingularPivot(2))));
    }

    #[test]
    fn thomas_columns_agree_with_vector_solve() {
        let mut r = rng(7);
        let p = dominant(&mut r, 9, 3);
        let fact = thomas_factor(&p).unwrap();
        let f1 = random_vector(&mut r, 9, 3);
        let f2 = random_vector(&mut r, 9, 3);
        let cols: Vec<Matrix> = (0..9)
            .map(|j| Matrix::from_fn(3, 2, |i, c| if c == 0 { f1.part(j)[i] } else { f2.part(j)[i] }))
            .collect();
        let x = fact.solve_columns(&cols).unwrap();
        let x1 = fact.solve(&f1).unwrap();
        let x2 = fact.solve(&f2).unwrap();
        for j in 0..9 {
            for i in 0..3 {
                assert!((x[j][(i, 0)] - x1.part(j)[i]).abs() < 1e-13);
                assert!((x[j][(i, 1)] - x2.part(j)[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn transpose_matches_dense_transpose() {
        let mut r = rng(8);
        let p = dominant(&mut r, 5, 2);
        assert_eq!(p.transpose().dense_expand().unwrap(), p.dense_expand().unwrap().transpose());
    }

    #[test]
    fn fingerprint_detects_changes() {
        let mut r = rng(9);
        let p = dominant(&mut r, 4, 2);
        let fact = thomas_factor(&p).unwrap();
        assert!(fact.matches(&p));
        let mut diag = p.diags().to_vec();
        diag[1][(0, 0)] += 1e-12;
        let q = BlockTriMatrix::new(diag, p.lowers().to_vec(), p.uppers().to_vec()).unwrap();
        assert!(!fact.matches(&q));
    }
}
