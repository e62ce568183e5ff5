//! Separation of variables on a rectangle.
//!
//! Unknown `(j, i)` with `j` the first coordinate (`0..nr`) and `i` in `z`
//! (`0..nz`) sits at index `j * nz + i`. The operator is
//!
//! ```text
//! (A u)_{j,i} = l_j u_{j-1,i} + c_j u_{j,i} + r_j u_{j+1,i}
//!             + w_j (2 u_{j,i} - u_{j,i-1} - u_{j,i+1})
//! ```
//!
//! with `u = 0` beyond both `z` ends. A discrete sine transform in `z`
//! decouples it into `nz` tridiagonal systems in `j`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::block::SINGULAR_TOL;
use crate::error::{mismatch, Error, Result};

/// Five-point stencil at one node; coefficients of the neighbours as they
/// appear in the row of `A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub center: f64,
    pub west: f64,
    pub east: f64,
    pub south: f64,
    pub north: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZBoundary {
    Dirichlet,
    Neumann,
}

/// DST-I of length `n` through a complex FFT of length `2(n + 1)`.
#[derive(Clone)]
pub struct Dst {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dst").field("n", &self.n).finish()
    }
}

impl PartialEq for Dst {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl Dst {
    pub fn new(n: usize) -> Self {
        Dst { n, fft: FftPlanner::new().plan_fft_forward(2 * (n + 1)) }
    }

    /// `X_k = sum_j x_j sin(pi (j+1)(k+1) / (n+1))` for every length-`n`
    /// chunk of `data`, in place.
    pub fn forward(&self, data: &mut [f64]) {
        let (n, len) = (self.n, 2 * (self.n + 1));
        let count = data.len() / n;
        let mut buf = vec![Complex::new(0.0, 0.0); count * len];
        for (c, chunk) in data.chunks(n).enumerate() {
            let b = &mut buf[c * len..(c + 1) * len];
            for (j, &x) in chunk.iter().enumerate() {
                b[j + 1].re = x;
                b[len - 1 - j].re = -x;
            }
        }
        self.fft.process(&mut buf);
        for (c, chunk) in data.chunks_mut(n).enumerate() {
            for (k, x) in chunk.iter_mut().enumerate() {
                *x = -0.5 * buf[c * len + k + 1].im;
            }
        }
    }

    pub fn inverse(&self, data: &mut [f64]) {
        self.forward(data);
        let s = 2.0 / (self.n + 1) as f64;
        data.iter_mut().for_each(|x| *x *= s);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparableOperator {
    nr: usize,
    nz: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    weight: Vec<f64>,
    dst: Dst,
    /// `sin(pi t / (nz + 1))` for `t` in `0..2(nz + 1)`.
    sines: Vec<f64>,
    /// Per mode `k`, Thomas multipliers of the tridiagonal system in `j`.
    inv_pivot: Vec<f64>,
    gain: Vec<f64>,
}

impl SeparableOperator {
    /// `lower[0]` and `upper[nr - 1]` are ignored.
    pub fn new(nz: usize, lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>, weight: Vec<f64>) -> Result<Self> {
        let nr = diag.len();
        if nr == 0 || nz == 0 || lower.len() != nr || upper.len() != nr || weight.len() != nr {
            return Err(mismatch("separable operator coefficient lengths differ"));
        }
        let period = 2 * (nz + 1);
        let sines = (0..period).map(|t| (std::f64::consts::PI * t as f64 / (nz + 1) as f64).sin()).collect();
        let mut op = SeparableOperator {
            nr,
            nz,
            lower,
            diag,
            upper,
            weight,
            dst: Dst::new(nz),
            sines,
            inv_pivot: vec![0.0; nr * nz],
            gain: vec![0.0; nr * nz],
        };
        op.factor()?;
        Ok(op)
    }

    /// Check that a five-point operator separates, and extract it. Requires
    /// Dirichlet ends in `z` and coefficients that do not vary with `i`.
    pub fn from_stencil(
        nr: usize,
        nz: usize,
        z_boundary: (ZBoundary, ZBoundary),
        stencil: impl Fn(usize, usize) -> Stencil,
    ) -> Result<Self> {
        if z_boundary != (ZBoundary::Dirichlet, ZBoundary::Dirichlet) {
            return Err(Error::NotSeparable("only Dirichlet ends in z are supported".into()));
        }
        let (mut lower, mut diag, mut upper, mut weight) = (vec![], vec![], vec![], vec![]);
        for j in 0..nr {
            let s0 = stencil(j, 0);
            let w = -s0.north;
            for i in 0..nz {
                let s = stencil(j, i);
                let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (a.abs() + b.abs()).max(1e-300);
                if !(same(-s.south, w) && same(-s.north, w) && same(s.center, s0.center))
                    || !(same(s.west, s0.west) && same(s.east, s0.east))
                {
                    return Err(Error::NotSeparable(format!("coefficients vary along z at column {j}")));
                }
            }
            lower.push(s0.west);
            diag.push(s0.center - 2.0 * w);
            upper.push(s0.east);
            weight.push(w);
        }
        Self::new(nz, lower, diag, upper, weight)
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn dim(&self) -> usize {
        self.nr * self.nz
    }

    fn eigenvalue(&self, k: usize) -> f64 {
        let t = std::f64::consts::PI * (k + 1) as f64 / (self.nz + 1) as f64;
        2.0 - 2.0 * t.cos()
    }

    fn factor(&mut self) -> Result<()> {
        let nr = self.nr;
        for k in 0..self.nz {
            let lam = self.eigenvalue(k);
            let base = k * nr;
            let mut prev_gain = 0.0;
            for j in 0..nr {
                let d = self.diag[j] + lam * self.weight[j];
                let piv = if j == 0 { d } else { d - self.lower[j] * prev_gain };
                let scale = d.abs() + self.lower[j].abs() + self.upper[j].abs();
                if !(piv.abs() > SINGULAR_TOL * scale) {
                    return Err(Error::SingularPivot(j + 1));
                }
                self.inv_pivot[base + j] = 1.0 / piv;
                prev_gain = if j + 1 < nr { self.upper[j] / piv } else { 0.0 };
                self.gain[base + j] = prev_gain;
            }
        }
        Ok(())
    }

    /// Solve one mode in place; `y` is indexed by `j`.
    fn mode_solve(&self, k: usize, y: &mut [f64]) {
        let base = k * self.nr;
        for j in 0..self.nr {
            let prev = if j > 0 { self.lower[j] * y[j - 1] } else { 0.0 };
            y[j] = (y[j] - prev) * self.inv_pivot[base + j];
        }
        for j in (0..self.nr.saturating_sub(1)).rev() {
            y[j] -= self.gain[base + j] * y[j + 1];
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let (nr, nz) = (self.nr, self.nz);
        let mut out = vec![0.0; nr * nz];
        for j in 0..nr {
            for i in 0..nz {
                let at = |jj: usize, ii: usize| u[jj * nz + ii];
                let mut v = (self.diag[j] + 2.0 * self.weight[j]) * at(j, i);
                if j > 0 {
                    v += self.lower[j] * at(j - 1, i);
                }
                if j + 1 < nr {
                    v += self.upper[j] * at(j + 1, i);
                }
                if i > 0 {
                    v -= self.weight[j] * at(j, i - 1);
                }
                if i + 1 < nz {
                    v -= self.weight[j] * at(j, i + 1);
                }
                out[j * nz + i] = v;
            }
        }
        out
    }

    /// Row-wise entries `(row, col, value)` of the operator.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let (nr, nz) = (self.nr, self.nz);
        let mut t = Vec::with_capacity(5 * nr * nz);
        for j in 0..nr {
            for i in 0..nz {
                let row = j * nz + i;
                if j > 0 {
                    t.push((row, row - nz, self.lower[j]));
                }
                if i > 0 {
                    t.push((row, row - 1, -self.weight[j]));
                }
                t.push((row, row, self.diag[j] + 2.0 * self.weight[j]));
                if i + 1 < nz {
                    t.push((row, row + 1, -self.weight[j]));
                }
                if j + 1 < nr {
                    t.push((row, row + nz, self.upper[j]));
                }
            }
        }
        t
    }

    pub fn is_symmetric(&self) -> bool {
        (1..self.nr).all(|j| (self.lower[j] - self.upper[j - 1]).abs() <= 1e-14 * self.lower[j].abs().max(1.0))
    }

    /// Full solve in `O(N log N)`.
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let (nr, nz) = (self.nr, self.nz);
        if f.len() != nr * nz {
            return Err(mismatch("separable rhs length"));
        }
        let mut u = f.to_vec();
        self.dst.forward(&mut u);
        // transpose to mode-major so each mode is contiguous in j
        let mut modes = vec![0.0; nr * nz];
        for j in 0..nr {
            for k in 0..nz {
                modes[k * nr + j] = u[j * nz + k];
            }
        }
        for (k, y) in modes.chunks_mut(nr).enumerate() {
            self.mode_solve(k, y);
        }
        for j in 0..nr {
            for k in 0..nz {
                u[j * nz + k] = modes[k * nr + j];
            }
        }
        self.dst.inverse(&mut u);
        Ok(u)
    }

    fn sine(&self, k: usize, i: usize) -> f64 {
        self.sines[((k + 1) * (i + 1)) % self.sines.len()]
    }

    /// Entries `outputs` of `A^{-1} f` for a sparse `f`, without full-size
    /// transforms. Returns the values and the number of multiply-adds.
    pub fn restricted_solve(&self, input: &[(usize, f64)], outputs: &[usize]) -> Result<(Vec<f64>, u64)> {
        let (nr, nz) = (self.nr, self.nz);
        if input.iter().map(|e| e.0).chain(outputs.iter().copied()).any(|i| i >= nr * nz) {
            return Err(mismatch("restricted solve index out of range"));
        }
        let mut ops = 0u64;
        let mut modes = vec![0.0; nr * nz];
        for &(idx, v) in input {
            let (j, i) = (idx / nz, idx % nz);
            for k in 0..nz {
                modes[k * nr + j] += v * self.sine(k, i);
            }
            ops += nz as u64;
        }
        for (k, y) in modes.chunks_mut(nr).enumerate() {
            self.mode_solve(k, y);
        }
        ops += 3 * (nr * nz) as u64;
        let s = 2.0 / (nz + 1) as f64;
        let out = outputs
            .iter()
            .map(|&idx| {
                let (j, i) = (idx / nz, idx % nz);
                s * (0..nz).map(|k| modes[k * nr + j] * self.sine(k, i)).sum::<f64>()
            })
            .collect();
        ops += (outputs.len() * nz) as u64;
        Ok((out, ops))
    }
}
