#![allow(dead_code)]

use blocktri::block::{BlockTriMatrix, BlockVector, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn block(r: &mut ChaCha8Rng, m: usize) -> Matrix {
    Matrix::from_fn(m, m, |_, _| r.gen_range(-1.0..1.0))
}

/// Strictly block-row diagonally dominant block-tridiagonal matrix.
pub fn dominant(r: &mut ChaCha8Rng, n: usize, m: usize) -> BlockTriMatrix {
    let lower: Vec<_> = (1..n).map(|_| block(r, m)).collect();
    let upper: Vec<_> = (1..n).map(|_| block(r, m)).collect();
    let diag = (0..n)
        .map(|_| {
            let mut c = block(r, m);
            for i in 0..m {
                c[(i, i)] = 2.0 * m as f64 + 1.0 + r.gen_range(0.0..1.0);
            }
            c
        })
        .collect();
    BlockTriMatrix::new(diag, lower, upper).unwrap()
}

pub fn random_vector(r: &mut ChaCha8Rng, n: usize, m: usize) -> BlockVector {
    BlockVector::new((0..n).map(|_| (0..m).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()).unwrap()
}

/// Row-major dense copy of `-A X_{j-1} + C X_j - B X_{j+1}`.
pub fn dense_of(p: &BlockTriMatrix) -> Vec<Vec<f64>> {
    let (n, m) = (p.n(), p.m());
    let mut a = vec![vec![0.0; n * m]; n * m];
    for j in 0..n {
        for r in 0..m {
            for c in 0..m {
                a[j * m + r][j * m + c] = p.diag(j)[(r, c)];
                if j > 0 {
                    a[j * m + r][(j - 1) * m + c] = -p.lowers()[j - 1][(r, c)];
                }
                if j + 1 < n {
                    a[j * m + r][(j + 1) * m + c] = -p.uppers()[j][(r, c)];
                }
            }
        }
    }
    a
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for c in k..n {
                    a[i][c] -= f * a[k][c];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|c| a[i][c] * x[c]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Banded elimination with partial pivoting on a matrix given by triplets
/// with lower and upper bandwidths `kl`, `ku`.
pub fn band_solve(n: usize, kl: usize, ku: usize, entries: &[(usize, usize, f64)], mut b: Vec<f64>) -> Vec<f64> {
    // row i keeps columns i-kl ..= i+kl+ku (fill from pivoting)
    let w = 2 * kl + ku + 1;
    let mut a = vec![0.0; n * w];
    let col = |i: usize, j: usize| j + kl - i;
    for &(i, j, v) in entries {
        assert!(j + kl >= i && j <= i + ku, "entry outside the band");
        a[i * w + col(i, j)] += v;
    }
    for k in 0..n {
        let last = (k + kl).min(n - 1);
        let piv = (k..=last).max_by(|&i, &j| a[i * w + col(i, k)].abs().total_cmp(&a[j * w + col(j, k)].abs())).unwrap();
        let hi = (k + kl + ku).min(n - 1);
        if piv != k {
            for c in k..=hi {
                let (x, y) = (a[k * w + col(k, c)], a[piv * w + col(piv, c)]);
                a[k * w + col(k, c)] = y;
                a[piv * w + col(piv, c)] = x;
            }
            b.swap(k, piv);
        }
        let d = a[k * w + col(k, k)];
        for i in k + 1..=last {
            let f = a[i * w + col(i, k)] / d;
            if f != 0.0 {
                for c in k..=hi {
                    a[i * w + col(i, c)] -= f * a[k * w + col(k, c)];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let hi = (i + kl + ku).min(n - 1);
        let s: f64 = (i + 1..=hi).map(|c| a[i * w + col(i, c)] * x[c]).sum();
        x[i] = (b[i] - s) / a[i * w + col(i, i)];
    }
    x
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |s, x| s.max(x.abs()))
}

pub fn rel_inf(x: &[f64], y: &[f64]) -> f64 {
    let d = x.iter().zip(y).fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
    d / max_abs(y).max(f64::MIN_POSITIVE)
}

/// Five-point operator of the two-strip model problem in mesh order:
/// column `j` holds `nz0` upper nodes, one interface node, then `nz1` lower
/// nodes, top to bottom. Dirichlet outside, unit spacing.
pub fn two_layer_mesh(nx: usize, nz0: usize, nz1: usize, k0: f64, k1: f64, shift: f64) -> Vec<(usize, usize, f64)> {
    let h = nz0 + 1 + nz1;
    let id = |j: usize, i: usize| j * h + i;
    let kx = 0.5 * (k0 + k1);
    let mut t = vec![];
    for j in 0..nx {
        for i in 0..h {
            // vertical faces above and below node i
            let up = if i <= nz0 { k0 } else { k1 };
            let down = if i < nz0 { k0 } else { k1 };
            let side = if i < nz0 {
                k0
            } else if i == nz0 {
                kx
            } else {
                k1
            };
            let diag = shift + up + down + 2.0 * side;
            if i > 0 {
                t.push((id(j, i), id(j, i - 1), -up));
            }
            if i + 1 < h {
                t.push((id(j, i), id(j, i + 1), -down));
            }
            if j > 0 {
                t.push((id(j, i), id(j - 1, i), -side));
            }
            if j + 1 < nx {
                t.push((id(j, i), id(j + 1, i), -side));
            }
            t.push((id(j, i), id(j, i), diag));
        }
    }
    t
}
