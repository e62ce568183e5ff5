//! Band matrices: probing construction, block-tridiagonal view, and the
//! band preconditioner solved through a dichotomy plan.

use crate::block::{BlockTriMatrix, BlockVector, Matrix};
use crate::dichotomy::{plan_build, DichotomyPlan};
use crate::error::{mismatch, Error, Result};
use crate::io::{put_f64s, put_u64, Reader};

pub const BAND_MAGIC: &[u8; 4] = b"BAND";

/// Square matrix with entries `(i, j)`, `|i - j| <= d`, stored row by row as
/// `data[i * (2d + 1) + (j - i + d)]`. Slots outside the matrix stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    symmetric: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, d: usize) -> Self {
        BandMatrix { n, d, data: vec![0.0; n * (2 * d + 1)], symmetric: false }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n, 0);
        b.data.fill(1.0);
        b.symmetric = true;
        b
    }

    pub fn from_raw(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * (2 * d + 1) {
            return Err(mismatch(format!("band data of {} values for n={n}, d={d}", data.len())));
        }
        Ok(BandMatrix { n, d, data, symmetric: false })
    }

    /// Band part of a dense matrix.
    pub fn from_dense(a: &Matrix, d: usize) -> Self {
        let n = a.rows();
        let mut b = Self::zeros(n, d);
        for i in 0..n {
            for j in i.saturating_sub(d)..(i + d + 1).min(n) {
                b.set(i, j, a[(i, j)]);
            }
        }
        b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        (i < self.n && j < self.n && i.abs_diff(j) <= self.d).then(|| i * (2 * self.d + 1) + j + self.d - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside the band");
        self.data[s] = v;
        self.symmetric = false;
    }

    pub fn to_dense(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (i.saturating_sub(self.d)..(i + self.d + 1).min(self.n)).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Replace by `(B + B^T) / 2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..(i + self.d + 1).min(self.n) {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
        self.symmetric = true;
    }

    /// Whether a band Cholesky factorization succeeds.
    pub fn is_spd(&self) -> bool {
        let (n, d) = (self.n, self.d);
        // lower factor in the same band layout, only j <= i used
        let mut l = Self::zeros(n, d);
        for i in 0..n {
            for j in i.saturating_sub(d)..=i {
                let mut s = self.get(i, j);
                for k in i.saturating_sub(d).max(j.saturating_sub(d))..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    l.set(i, i, s.sqrt());
                } else {
                    l.set(i, j, s / l.get(j, j));
                }
            }
        }
        true
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = BAND_MAGIC.to_vec();
        put_u64(&mut out, self.n);
        put_u64(&mut out, self.d);
        put_f64s(&mut out, &self.data);
        out
    }

    /// Parse the BAND format. Slots that fall outside the matrix must be zero.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(BAND_MAGIC)?;
        let n = r.usize()?;
        let d = r.usize()?;
        if n == 0 {
            return Err(Error::Format("band order must be positive".into()));
        }
        let width = d
            .checked_mul(2)
            .and_then(|w| w.checked_add(1))
            .and_then(|w| w.checked_mul(n))
            .ok_or_else(|| Error::Format("band size overflow".into()))?;
        let data = r.f64s(width)?;
        r.finish()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("band holds non-finite values".into()));
        }
        let b = BandMatrix { n, d, data, symmetric: false };
        for i in 0..n {
            for off in 0..2 * d + 1 {
                let j = (i + off).checked_sub(d);
                if j.is_none_or(|j| j >= n) && b.data[i * (2 * d + 1) + off] != 0.0 {
                    return Err(Error::Format("nonzero outside the matrix".into()));
                }
            }
        }
        Ok(b)
    }
}

/// Recover the band of an operator from `2d + 1` products with indicator
/// vectors of the index classes mod `2d + 1`, then symmetrize.
pub fn probing_build(apply: impl Fn(&[f64]) -> Result<Vec<f64>>, d: usize, n: usize) -> Result<BandMatrix> {
    let q = 2 * d + 1;
    if q > n {
        return Err(Error::BandTooWide { probes: q, order: n });
    }
    let mut b = BandMatrix::zeros(n, d);
    for l in 0..q {
        let probe: Vec<f64> = (0..n).map(|j| if j % q == l { 1.0 } else { 0.0 }).collect();
        let y = apply(&probe)?;
        if y.len() != n {
            return Err(mismatch("probe product has the wrong length"));
        }
        for (i, &yi) in y.iter().enumerate() {
            // the unique j in the band of row i with j = l (mod q)
            let lo = i.saturating_sub(d);
            let j = lo + (l + q - lo % q) % q;
            if j < n && j <= i + d {
                b.set(i, j, yi);
            }
        }
    }
    b.symmetrize();
    Ok(b)
}

/// View a band matrix as a block-tridiagonal matrix with blocks of order `block`,
/// padding with identity rows. Uses the sign convention
/// `-A_j X_{j-1} + C_j X_j - B_j X_{j+1}`.
pub fn band_as_blocktrid(b: &BandMatrix, block: usize) -> Result<BlockTriMatrix> {
    if block == 0 {
        return Err(Error::InvalidParameter("block order must be positive".into()));
    }
    if block < b.d {
        return Err(Error::BlockTooSmall { block, bandwidth: b.d });
    }
    let m = block;
    let nb = b.n.div_ceil(m);
    let entry = |i: usize, j: usize| -> f64 {
        if i < b.n && j < b.n {
            b.get(i, j)
        } else if i == j {
            1.0
        } else {
            0.0
        }
    };
    let blk = |bi: usize, bj: usize, sign: f64| Matrix::from_fn(m, m, |r, c| sign * entry(bi * m + r, bj * m + c));
    let diag = (0..nb).map(|j| blk(j, j, 1.0)).collect();
    let lower = (1..nb).map(|j| blk(j, j - 1, -1.0)).collect();
    let upper = (0..nb.saturating_sub(1)).map(|j| blk(j, j + 1, -1.0)).collect();
    BlockTriMatrix::new(diag, lower, upper)
}

/// Solver for `B z = r`: a dichotomy plan when `B` is SPD, else diagonal
/// scaling.
#[derive(Clone, Debug)]
pub enum BandPreconditioner {
    Dichotomy { plan: Box<DichotomyPlan>, n: usize },
    Diagonal(Vec<f64>),
}

impl BandPreconditioner {
    /// `ranks` is capped by the number of blocks.
    pub fn new(b: &BandMatrix, ranks: usize) -> Result<Self> {
        if !b.is_spd() {
            log::warn!("probed band matrix (n={}, d={}) is not SPD; using diagonal preconditioning", b.n, b.d);
            return Ok(Self::diagonal(b));
        }
        let p = band_as_blocktrid(b, b.d.max(1))?;
        let plan = plan_build(&p, ranks.clamp(1, p.n()))?;
        Ok(BandPreconditioner::Dichotomy { plan: Box::new(plan), n: b.n })
    }

    pub fn diagonal(b: &BandMatrix) -> Self {
        BandPreconditioner::Diagonal(
            (0..b.n)
                .map(|i| {
                    let v = b.get(i, i);
                    if v != 0.0 && v.is_finite() {
                        1.0 / v.abs()
                    } else {
                        1.0
                    }
                })
                .collect(),
        )
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, BandPreconditioner::Diagonal(_))
    }

    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            BandPreconditioner::Diagonal(inv) => {
                if r.len() != inv.len() {
                    return Err(mismatch("preconditioner input length"));
                }
                Ok(r.iter().zip(inv).map(|(a, b)| a * b).collect())
            }
            BandPreconditioner::Dichotomy { plan, n } => {
                if r.len() != *n {
                    return Err(mismatch("preconditioner input length"));
                }
                let m = plan.m();
                let mut flat = r.to_vec();
                flat.resize(plan.n() * m, 0.0);
                let x = plan.solve(&BlockVector::from_flat(plan.n(), m, &flat)?)?;
                let mut out = x.to_flat();
                out.truncate(*n);
                Ok(out)
            }
        }
    }
}

/// `B^{-1} r`, building the preconditioner on the spot.
pub fn precond_apply(b: &BandMatrix, r: &[f64]) -> Result<Vec<f64>> {
    BandPreconditioner::new(b, 1)?.apply(r)
}
