//! Acoustic modeling in cylindrical `(r, z)` coordinates with a Laguerre
//! transform in time. Each harmonic is an elliptic problem solved through the
//! interface Schur complement; a bottom absorbing layer uses the first-order
//! velocity-pressure form.

pub mod laguerre;
pub mod medium;
pub mod solver;
pub mod system;

pub use laguerre::{
    laguerre_all, laguerre_fn, phi_step, reconstruct_scalar, reconstruct_time, transform_coeffs, LaguerreParams,
    PhiAccumulator,
};

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Source wavelet parameters and position on the axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSpec {
    /// Peak frequency, Hz.
    pub f0: f64,
    /// Time shift, s.
    pub t0: f64,
    pub g: f64,
    /// Source depth, m.
    pub depth: f64,
    pub amplitude: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec { f0: 30.0, t0: 0.2, g: 4.0, depth: 0.0, amplitude: 1.0 }
    }
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.g > 0.0 && self.t0.is_finite() && self.amplitude.is_finite() && self.depth >= 0.0) {
            return Err(Error::InvalidParameter("source needs f0 > 0, g > 0 and a finite shift".into()));
        }
        Ok(())
    }

    /// Interval outside which the envelope is below `exp(-49)`.
    pub fn support(&self) -> (f64, f64) {
        let tau = 7.0 * self.g / (2.0 * PI * self.f0);
        ((self.t0 - tau).max(0.0), self.t0 + tau)
    }
}

/// `exp(-(2 pi f0 (t - t0))^2 / g^2) sin(2 pi f0 (t - t0))`, times the amplitude.
pub fn ricker_like(t: f64, s: &SourceSpec) -> f64 {
    let a = 2.0 * PI * s.f0 * (t - s.t0);
    s.amplitude * (-(a * a) / (s.g * s.g)).exp() * a.sin()
}

/// Laguerre coefficients of the source wavelet.
pub fn source_coeffs(s: &SourceSpec, lp: &LaguerreParams) -> Result<Vec<f64>> {
    s.validate()?;
    if s.amplitude == 0.0 {
        lp.validate()?;
        return Ok(vec![0.0; lp.nterms]);
    }
    transform_coeffs(|t| ricker_like(t, s), s.support(), lp)
}
