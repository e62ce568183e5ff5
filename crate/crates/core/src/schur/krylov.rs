//! Preconditioned conjugate gradients and restarted GMRES.

use crate::error::{mismatch, Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// Final relative residual: preconditioned norm for CG, Euclidean for GMRES.
    pub relative_residual: f64,
    pub converged: bool,
    pub breakdown: bool,
    /// Relative residual after each iteration, starting with 1.
    pub history: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn checked(v: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    if v.len() != n {
        return Err(mismatch(format!("operator returned {} values, expected {n}", v.len())));
    }
    Ok(v)
}

/// Solve `A x = b` from `x = 0`. Stops when `sqrt(r'z) <= tol * sqrt(r0'z0)`.
pub fn cg_solve(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    precond: impl Fn(&[f64]) -> Result<Vec<f64>>,
    tol: f64,
    maxit: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = checked(precond(&r)?, n)?;
    let mut rz = dot(&r, &z);
    let mut stats = CgStats { history: vec![1.0], ..Default::default() };
    if rz == 0.0 {
        stats.converged = true;
        return Ok((x, stats));
    }
    if !(rz > 0.0) {
        return Err(Error::Breakdown { iteration: 0, reason: "preconditioner is not positive definite" });
    }
    let rz0 = rz;
    let mut p = z.clone();
    for it in 1..=maxit {
        let q = checked(apply(&p)?, n)?;
        let curv = dot(&p, &q);
        if !(curv > 0.0) {
            return Err(Error::Breakdown { iteration: it, reason: "nonpositive curvature" });
        }
        let alpha = rz / curv;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        z = checked(precond(&r)?, n)?;
        let rz_new = dot(&r, &z);
        if rz_new < 0.0 {
            return Err(Error::Breakdown { iteration: it, reason: "preconditioner is not positive definite" });
        }
        let rel = (rz_new / rz0).sqrt();
        stats.iterations = it;
        stats.relative_residual = rel;
        stats.history.push(rel);
        if rel <= tol {
            stats.converged = true;
            return Ok((x, stats));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Ok((x, stats))
}

/// Right-preconditioned GMRES(restart) from `x = 0`; the residual criterion is
/// `|b - A x| <= tol |b|`.
pub fn gmres_solve(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    precond: impl Fn(&[f64]) -> Result<Vec<f64>>,
    tol: f64,
    maxit: usize,
    restart: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = rhs.len();
    let restart = restart.max(1);
    let mut x = vec![0.0; n];
    let bnorm = norm(rhs);
    let mut stats = CgStats { history: vec![1.0], ..Default::default() };
    if bnorm == 0.0 {
        stats.converged = true;
        return Ok((x, stats));
    }
    let mut total = 0;
    while total < maxit {
        let ax = checked(apply(&x)?, n)?;
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        if beta <= tol * bnorm {
            stats.converged = true;
            stats.relative_residual = beta / bnorm;
            break;
        }
        let mut v = vec![r.iter().map(|e| e / beta).collect::<Vec<f64>>()];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut h: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && total < maxit {
            let z = checked(precond(&v[k])?, n)?;
            let mut w = checked(apply(&z)?, n)?;
            zs.push(z);
            let mut col = vec![0.0; k + 2];
            for (i, vi) in v.iter().enumerate() {
                col[i] = dot(&w, vi);
                axpy(-col[i], vi, &mut w);
            }
            col[k + 1] = norm(&w);
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let rho = col[k].hypot(col[k + 1]);
            if rho == 0.0 {
                return Err(Error::Breakdown { iteration: total + 1, reason: "singular Hessenberg matrix" });
            }
            let (c, s) = (col[k] / rho, col[k + 1] / rho);
            let hk1 = col[k + 1];
            col[k] = rho;
            col[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g.push(-s * g[k]);
            g[k] *= c;
            h.push(col);
            total += 1;
            k += 1;
            let rel = g[k].abs() / bnorm;
            stats.iterations = total;
            stats.relative_residual = rel;
            stats.history.push(rel);
            if rel <= tol || hk1 == 0.0 {
                break;
            }
            v.push(w.iter().map(|e| e / hk1).collect());
        }
        // back substitution for the k Krylov coefficients
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[j][i] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, z) in y.iter().zip(&zs) {
            axpy(*yi, z, &mut x);
        }
        if stats.relative_residual <= tol {
            stats.converged = true;
            break;
        }
    }
    Ok((x, stats))
}
