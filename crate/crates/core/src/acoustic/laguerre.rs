//! Orthonormal Laguerre functions and the time transform
//! `u(t) = (eta t)^{alpha/2} sum_m u_m l_m(eta t)`,
//! `u_m = eta * int u(t) (eta t)^{-alpha/2} l_m(eta t) dt`.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{mismatch, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaguerreParams {
    pub alpha: u32,
    /// Transformation parameter, 1/s.
    pub eta: f64,
    pub nterms: usize,
}

impl LaguerreParams {
    pub fn new(alpha: u32, eta: f64, nterms: usize) -> Result<Self> {
        let lp = LaguerreParams { alpha, eta, nterms };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        if self.nterms == 0 {
            return Err(Error::InvalidParameter("nterms must be at least 1".into()));
        }
        Ok(())
    }

    fn a(&self) -> f64 {
        f64::from(self.alpha)
    }

    /// `sqrt((k + alpha)! / k!)`.
    pub fn weight(&self, k: usize) -> f64 {
        let k = k as f64;
        (0.5 * (ln_gamma(k + self.a() + 1.0) - ln_gamma(k + 1.0))).exp()
    }

    /// `eta * sqrt((m + 1)! / (m + alpha + 1)!)`, the factor in front of the
    /// running sum of `Phi(X_m)`.
    pub fn phi_scale(&self, m: usize) -> f64 {
        let m = m as f64;
        self.eta * (0.5 * (ln_gamma(m + 2.0) - ln_gamma(m + self.a() + 2.0))).exp()
    }

    /// `eta^2 * sqrt(m! / (m + alpha)!)`, the factor of the second-derivative
    /// history sum for harmonic `m`.
    pub fn history_scale(&self, m: usize) -> f64 {
        let m = m as f64;
        self.eta * self.eta * (0.5 * (ln_gamma(m + 1.0) - ln_gamma(m + self.a() + 1.0))).exp()
    }
}

/// `x^power e^{-x/2} p_m(x)` for `m < n`, where `p_m` is the normalized
/// Laguerre polynomial, so `power = alpha/2` gives `l_m`. The recurrence runs
/// with a separate log scale so large `x` neither overflows nor loses terms.
pub fn laguerre_weighted(n: usize, alpha: u32, x: f64, power: f64) -> Vec<f64> {
    let a = f64::from(alpha);
    let mut out = vec![0.0; n];
    if n == 0 || (x == 0.0 && power > 0.0) {
        return out;
    }
    let mut log_scale = -0.5 * x - 0.5 * ln_factorial(alpha);
    if power != 0.0 {
        log_scale += power * x.ln();
    }
    let (mut prev, mut cur) = (0.0f64, 1.0f64);
    for (m, o) in out.iter_mut().enumerate() {
        *o = cur * log_scale.exp();
        let mf = m as f64;
        let next = ((2.0 * mf + 1.0 + a - x) * cur - (mf * (mf + a)).sqrt() * prev) / ((mf + 1.0) * (mf + 1.0 + a)).sqrt();
        prev = cur;
        cur = next;
        let big = cur.abs().max(prev.abs());
        if big > 1e150 || (big < 1e-150 && big > 0.0) {
            prev /= big;
            cur /= big;
            log_scale += big.ln();
        }
    }
    out
}

/// `ln(k!)` summed exactly for the small orders used here.
fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|i| f64::from(i).ln()).sum()
}

/// `l_0(x), ..., l_{n-1}(x)`.
pub fn laguerre_all(n: usize, alpha: u32, x: f64) -> Vec<f64> {
    laguerre_weighted(n, alpha, x, 0.5 * f64::from(alpha))
}

/// Orthonormal Laguerre function `l^alpha_m(x)`.
pub fn laguerre_fn(m: usize, alpha: u32, x: f64) -> f64 {
    laguerre_all(m + 1, alpha, x)[m]
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

const GL_POINTS: usize = 20;
const QUADRATURE_TOL: f64 = 1e-10;
const MAX_REFINEMENTS: usize = 8;

fn composite(f: &(impl Fn(f64) -> f64 + Sync), (a, b): (f64, f64), lp: &LaguerreParams, panels: usize) -> Vec<f64> {
    let (gx, gw) = gauss_legendre(GL_POINTS);
    let h = (b - a) / panels as f64;
    let parts: Vec<Vec<f64>> = (0..panels)
        .into_par_iter()
        .map(|p| {
            let mut acc = vec![0.0; lp.nterms];
            for (xi, wi) in gx.iter().zip(&gw) {
                let t = a + h * (p as f64 + 0.5 * (xi + 1.0));
                let ft = f(t);
                if ft == 0.0 {
                    continue;
                }
                // (eta t)^{-alpha/2} l_m(eta t) leaves no power of x
                let vals = laguerre_weighted(lp.nterms, lp.alpha, lp.eta * t, 0.0);
                let s = 0.5 * h * wi * lp.eta * ft;
                acc.iter_mut().zip(vals).for_each(|(c, v)| *c += s * v);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; lp.nterms];
    for p in parts {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    out
}

/// Laguerre coefficients of `f`, which must vanish outside `support` (in
/// seconds). Composite 20-point Gauss-Legendre, refined until two successive
/// levels agree to 1e-10 absolute.
pub fn transform_coeffs(f: impl Fn(f64) -> f64 + Sync, support: (f64, f64), lp: &LaguerreParams) -> Result<Vec<f64>> {
    lp.validate()?;
    let (a, b) = (support.0.max(0.0), support.1);
    if !(b > a) || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("empty support [{a}, {b}]")));
    }
    let mut panels = ((b - a) * lp.eta).ceil().max(1.0) as usize;
    let mut coarse = composite(&f, (a, b), lp, panels);
    for _ in 0..MAX_REFINEMENTS {
        panels *= 2;
        let fine = composite(&f, (a, b), lp, panels);
        if fine.iter().any(|v| !v.is_finite()) {
            return Err(Error::QuadratureFailure("non-finite coefficient".into()));
        }
        let diff = fine.iter().zip(&coarse).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if diff <= QUADRATURE_TOL {
            return Ok(fine);
        }
        coarse = fine;
    }
    Err(Error::QuadratureFailure(format!("no convergence with {panels} panels")))
}

/// Evaluate the truncated series of field coefficients at `times`:
/// `out[t][i] = (eta t)^{alpha/2} sum_m coeffs[m][i] l_m(eta t)`.
pub fn reconstruct_time(coeffs: &[Vec<f64>], lp: &LaguerreParams, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let len = coeffs.first().map_or(0, Vec::len);
    if coeffs.iter().any(|c| c.len() != len) {
        return Err(mismatch("coefficient fields differ in length"));
    }
    Ok(times
        .par_iter()
        .map(|&t| {
            let w = laguerre_weighted(coeffs.len(), lp.alpha, lp.eta * t, f64::from(lp.alpha));
            let mut out = vec![0.0; len];
            for (c, wm) in coeffs.iter().zip(w) {
                if wm != 0.0 {
                    out.iter_mut().zip(c).for_each(|(o, v)| *o += wm * v);
                }
            }
            out
        })
        .collect())
}

/// Scalar series `(eta t)^{alpha/2} sum_m c_m l_m(eta t)`.
pub fn reconstruct_scalar(c: &[f64], lp: &LaguerreParams, t: f64) -> f64 {
    let w = laguerre_weighted(c.len(), lp.alpha, lp.eta * t, f64::from(lp.alpha));
    c.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Running sums over harmonics of one field: `S_m = sum_{k<=m} w_k X_k` and
/// `T_m = sum_{j<m} S_j = sum_{k<m} (m - k) w_k X_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiAccumulator {
    sum: Vec<f64>,
    hist: Vec<f64>,
    count: usize,
}

impl PhiAccumulator {
    pub fn new(len: usize) -> Self {
        PhiAccumulator { sum: vec![0.0; len], hist: vec![0.0; len], count: 0 }
    }

    /// Harmonics pushed so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Append harmonic `count()`.
    pub fn push(&mut self, lp: &LaguerreParams, x: &[f64]) -> Result<()> {
        if x.len() != self.sum.len() {
            return Err(mismatch("accumulated field length"));
        }
        let w = lp.weight(self.count);
        for ((s, h), v) in self.sum.iter_mut().zip(&mut self.hist).zip(x) {
            *s += w * v;
            *h += *s;
        }
        self.count += 1;
        Ok(())
    }

    /// `Phi(X_{count-1})`; zero before the first push.
    pub fn phi(&self, lp: &LaguerreParams) -> Vec<f64> {
        match self.count {
            0 => vec![0.0; self.sum.len()],
            c => {
                let s = lp.phi_scale(c - 1);
                self.sum.iter().map(|v| s * v).collect()
            }
        }
    }

    /// `eta^2 sqrt(m!/(m+alpha)!) sum_{k<m} (m-k) w_k X_k` for `m = count()`.
    pub fn history(&self, lp: &LaguerreParams) -> Vec<f64> {
        let s = lp.history_scale(self.count);
        self.hist.iter().map(|v| s * v).collect()
    }
}

/// Push `X_m` and return `Phi(X_m)`.
pub fn phi_step(acc: &mut PhiAccumulator, x: &[f64], lp: &LaguerreParams) -> Result<Vec<f64>> {
    acc.push(lp, x)?;
    Ok(acc.phi(lp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(alpha: u32, eta: f64, n: usize) -> LaguerreParams {
        LaguerreParams::new(alpha, eta, n).unwrap()
    }

    /// Gauss-Laguerre (weight e^{-x}) nodes by Newton on the plain recurrence.
    fn gauss_laguerre(n: usize) -> Vec<(f64, f64)> {
        let nf = n as f64;
        let mut out: Vec<(f64, f64)> = vec![];
        let mut z = 0.0;
        for i in 0..n {
            z = match i {
                0 => 3.0 / (1.0 + 2.4 * nf),
                1 => z + 15.0 / (1.0 + 2.5 * nf),
                _ => {
                    let ai = (i - 1) as f64;
                    z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - out[i - 2].0)
                }
            };
            let (mut pn, mut pm) = (0.0, 0.0);
            for _ in 0..200 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for k in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let kf = k as f64;
                    p1 = ((2.0 * kf - 1.0 - z) * p2 - (kf - 1.0) * p3) / kf;
                }
                (pn, pm) = (p1, p2);
                let dz = p1 / (nf * (p1 - p2) / z);
                z -= dz;
                if dz.abs() < 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            let dp = nf * (pn - pm) / z;
            out.push((z, -1.0 / (dp * nf * pm)));
        }
        out
    }

    #[test]
    fn first_function_closed_form() {
        assert_eq!(laguerre_fn(0, 0, 0.0), 1.0);
        for x in [0.0, 0.5, 3.0, 40.0] {
            assert!((laguerre_fn(0, 0, x) - (-x / 2.0f64).exp()).abs() < 1e-15);
            assert!((laguerre_fn(1, 0, x) - (1.0 - x) * (-x / 2.0f64).exp()).abs() < 1e-14);
        }
        assert_eq!(laguerre_fn(4, 3, 0.0), 0.0);
    }

    #[test]
    fn orthonormal_under_gauss_laguerre() {
        let q = gauss_laguerre(40);
        for alpha in [0, 2, 5] {
            for m in 0..=20 {
                for k in 0..=20 {
                    let s: f64 = q
                        .iter()
                        .map(|&(x, w)| {
                            let v = laguerre_all(21, alpha, x);
                            w * x.exp() * v[m] * v[k]
                        })
                        .sum();
                    let want = if m == k { 1.0 } else { 0.0 };
                    assert!((s - want).abs() < 1e-8, "alpha {alpha} m {m} k {k}: {s}");
                }
            }
        }
    }

    #[test]
    fn large_argument_stays_finite() {
        for (m, alpha) in [(0, 0), (10, 5), (300, 5), (2000, 8)] {
            for x in [700.0, 1500.0, 5000.0] {
                let v = laguerre_fn(m, alpha, x);
                assert!(v.is_finite() && v.abs() < 1.0, "m {m} x {x}: {v}");
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(20);
        for p in 0..40 {
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let want = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            assert!((s - want).abs() < 1e-14, "degree {p}");
        }
    }

    #[test]
    fn coefficients_of_a_basis_function() {
        let p = lp(5, 1800.0, 12);
        let f = |t: f64| {
            let x = p.eta * t;
            x.powf(2.5) * laguerre_fn(3, 5, x)
        };
        let c = transform_coeffs(f, (0.0, 200.0 / p.eta), &p).unwrap();
        for (m, v) in c.iter().enumerate() {
            let want = if m == 3 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-8, "m {m}: {v}");
        }
        let z = transform_coeffs(|_| 0.0, (0.0, 1.0), &p).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    fn smooth(t: f64) -> f64 {
        (-(40.0 * (t - 0.15)).powi(2)).exp() * (60.0 * t).sin()
    }

    fn smooth_dt(t: f64) -> f64 {
        let g = (-(40.0 * (t - 0.15)).powi(2)).exp();
        g * (60.0 * (60.0 * t).cos() - 3200.0 * (t - 0.15) * (60.0 * t).sin())
    }

    #[test]
    fn derivative_rule() {
        let p = lp(3, 400.0, 120);
        let u = transform_coeffs(smooth, (0.0, 0.35), &p).unwrap();
        let du = transform_coeffs(smooth_dt, (0.0, 0.35), &p).unwrap();
        let mut acc = PhiAccumulator::new(1);
        let scale = du.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for m in 0..p.nterms {
            let want = 0.5 * p.eta * u[m] + acc.phi(&p)[0];
            assert!((du[m] - want).abs() < 1e-9 * scale, "m {m}");
            acc.push(&p, &[u[m]]).unwrap();
        }
    }

    #[test]
    fn second_derivative_rule() {
        // sin^2 envelope keeps the second derivative simple
        let f = |t: f64| if (0.05..0.25).contains(&t) { (10.0 * std::f64::consts::PI * (t - 0.05)).sin().powi(4) } else { 0.0 };
        let w = 10.0 * std::f64::consts::PI;
        let f2 = |t: f64| {
            if (0.05..0.25).contains(&t) {
                let (s, c) = (w * (t - 0.05)).sin_cos();
                w * w * (12.0 * s * s * c * c - 4.0 * s.powi(4))
            } else {
                0.0
            }
        };
        let p = lp(2, 300.0, 100);
        let u = transform_coeffs(f, (0.05, 0.25), &p).unwrap();
        let d2 = transform_coeffs(f2, (0.05, 0.25), &p).unwrap();
        let mut acc = PhiAccumulator::new(1);
        let scale = d2.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for m in 0..p.nterms {
            let want = 0.25 * p.eta * p.eta * u[m] + acc.history(&p)[0];
            assert!((d2[m] - want).abs() < 1e-7 * scale, "m {m}: {} vs {want}", d2[m]);
            acc.push(&p, &[u[m]]).unwrap();
        }
    }

    #[test]
    fn round_trip_smooth_signal() {
        let p = lp(4, 600.0, 200);
        let c = transform_coeffs(smooth, (0.0, 0.35), &p).unwrap();
        for i in 0..60 {
            let t = 0.005 * i as f64;
            let e = (reconstruct_scalar(&c, &p, t) - smooth(t)).abs();
            assert!(e < 1e-8, "t {t}: {e}");
        }
        let fields: Vec<Vec<f64>> = c.iter().map(|&v| vec![v, 2.0 * v]).collect();
        let r = reconstruct_time(&fields, &p, &[0.0, 0.15]).unwrap();
        assert_eq!(r[0], vec![0.0, 0.0]);
        assert!((r[1][1] - 2.0 * smooth(0.15)).abs() < 1e-8);
    }

    #[test]
    fn phi_small_cases() {
        let p = lp(0, 7.0, 1);
        let mut acc = PhiAccumulator::new(2);
        assert_eq!(phi_step(&mut acc, &[0.0, 0.0], &p).unwrap(), vec![0.0, 0.0]);
        let mut acc = PhiAccumulator::new(1);
        assert!((phi_step(&mut acc, &[3.0], &p).unwrap()[0] - 21.0).abs() < 1e-13);
        assert!(acc.push(&p, &[1.0, 2.0]).is_err());
        assert!(LaguerreParams::new(1, 0.0, 3).is_err() && LaguerreParams::new(1, 1.0, 0).is_err());
    }
}
