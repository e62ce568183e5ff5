//! Cell-centred finite volumes on an axisymmetric `(r, z)` grid.
//!
//! Cell `(j, i)` (radial index `j`, depth index `i`) has centre
//! `((j + 1/2) h_r, (i + 1/2) h_z)` and index `j * nz + i`. Volumes and face
//! areas carry the `r` weight with the `2 pi` dropped.

use crate::error::{Error, Result};
use crate::schur::SparseMatrix;

use super::laguerre::LaguerreParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Zero normal derivative.
    Neumann,
    /// Zero value on the boundary face.
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Boundaries {
    pub top: Boundary,
    pub bottom: Boundary,
    pub outer: Boundary,
}

impl Default for Boundaries {
    fn default() -> Self {
        Boundaries { top: Boundary::Neumann, bottom: Boundary::Dirichlet, outer: Boundary::Dirichlet }
    }
}

/// Per-cell coefficients of `div(kappa grad p) - rho p_tt`, with
/// `kappa = 1 / density` and `rho = 1 / (density c^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MediumModel {
    pub nz: usize,
    pub nr: usize,
    pub hz: f64,
    pub hr: f64,
    pub rho: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Layer index of every depth row.
    pub layer: Vec<usize>,
    pub bc: Boundaries,
}

/// Horizontal layer: row count, velocity (m/s) and density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub velocity: f64,
    pub density: f64,
}

impl MediumModel {
    pub fn layered(nr: usize, hz: f64, hr: f64, layers: &[Layer]) -> Result<Self> {
        let nz: usize = layers.iter().map(|l| l.rows).sum();
        let mut rho = vec![0.0; nz * nr];
        let mut kappa = vec![0.0; nz * nr];
        let mut layer = Vec::with_capacity(nz);
        for (k, l) in layers.iter().enumerate() {
            if !(l.velocity > 0.0 && l.density > 0.0) {
                return Err(Error::InvalidParameter(format!("layer {k} needs positive velocity and density")));
            }
            layer.extend(std::iter::repeat_n(k, l.rows));
        }
        for j in 0..nr {
            for (i, &k) in layer.iter().enumerate() {
                let l = layers[k];
                kappa[j * nz + i] = 1.0 / l.density;
                rho[j * nz + i] = 1.0 / (l.density * l.velocity * l.velocity);
            }
        }
        let m = MediumModel { nz, nr, hz, hr, rho, kappa, layer, bc: Boundaries::default() };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(nz: usize, nr: usize, hz: f64, hr: f64, velocity: f64, density: f64) -> Result<Self> {
        Self::layered(nr, hz, hr, &[Layer { rows: nz, velocity, density }])
    }

    pub fn with_boundaries(mut self, bc: Boundaries) -> Self {
        self.bc = bc;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz == 0 || self.nr == 0 || !(self.hz > 0.0 && self.hr > 0.0) {
            return Err(Error::InvalidParameter("grid needs positive sizes and steps".into()));
        }
        let n = self.nz * self.nr;
        if self.rho.len() != n || self.kappa.len() != n || self.layer.len() != self.nz {
            return Err(Error::InvalidParameter("medium fields do not match the grid".into()));
        }
        if self.rho.iter().chain(&self.kappa).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("rho and kappa must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.nz * self.nr
    }

    pub fn index(&self, j: usize, i: usize) -> usize {
        j * self.nz + i
    }

    /// Cell-centre radius.
    pub fn radius(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hr
    }

    /// Cell-centre depth.
    pub fn depth(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hz
    }

    pub fn volume(&self, j: usize) -> f64 {
        self.radius(j) * self.hr * self.hz
    }

    /// Depth row containing `z`, clamped to the grid.
    pub fn row_at(&self, z: f64) -> usize {
        ((z / self.hz).floor().max(0.0) as usize).min(self.nz - 1)
    }

    pub fn column_at(&self, r: f64) -> usize {
        ((r / self.hr).floor().max(0.0) as usize).min(self.nr - 1)
    }

    fn k(&self, j: usize, i: usize) -> f64 {
        self.kappa[self.index(j, i)]
    }

    /// `kappa` on the face between cells `(j, i)` and `(j + 1, i)`, or on the
    /// outer boundary face for the last column. Zero across a Neumann face.
    pub fn radial_face_kappa(&self, j: usize, i: usize) -> f64 {
        if j + 1 < self.nr {
            harmonic(self.k(j, i), self.k(j + 1, i))
        } else {
            match self.bc.outer {
                Boundary::Dirichlet => self.k(j, i),
                Boundary::Neumann => 0.0,
            }
        }
    }

    /// Distance between the unknowns across the outer face of column `j`.
    pub fn radial_face_dist(&self, j: usize) -> f64 {
        if j + 1 < self.nr {
            self.hr
        } else {
            0.5 * self.hr
        }
    }

    /// `kappa area / distance` across the face between `(j, i)` and
    /// `(j + 1, i)` (the outer boundary when `j = nr - 1`).
    pub fn radial_conductance(&self, j: usize, i: usize) -> f64 {
        let area = (j + 1) as f64 * self.hr * self.hz;
        self.radial_face_kappa(j, i) * area / self.radial_face_dist(j)
    }

    /// Conductance across the face above row `i`, `0 <= i <= nz`; `i = 0` and
    /// `i = nz` are the top and bottom boundaries.
    pub fn vertical_conductance(&self, j: usize, i: usize) -> f64 {
        let area = self.radius(j) * self.hr;
        let boundary = |b: Boundary, row: usize| match b {
            Boundary::Dirichlet => self.k(j, row) * area / (0.5 * self.hz),
            Boundary::Neumann => 0.0,
        };
        if i == 0 {
            boundary(self.bc.top, 0)
        } else if i == self.nz {
            boundary(self.bc.bottom, self.nz - 1)
        } else {
            harmonic(self.k(j, i - 1), self.k(j, i)) * area / self.hz
        }
    }

    /// Entries of row `(j, i)` of the interior operator for rows `[.., nz)`:
    /// `(column cell, value)` pairs, diagonal included.
    pub fn operator_row(&self, j: usize, i: usize, lp: &LaguerreParams) -> Vec<((usize, usize), f64)> {
        let c = self.index(j, i);
        let mut diag = 0.25 * self.rho[c] * lp.eta * lp.eta * self.volume(j);
        let mut row = Vec::with_capacity(5);
        if j > 0 {
            let g = self.radial_conductance(j - 1, i);
            diag += g;
            row.push(((j - 1, i), -g));
        }
        let g = self.radial_conductance(j, i);
        diag += g;
        if j + 1 < self.nr {
            row.push(((j + 1, i), -g));
        }
        let up = self.vertical_conductance(j, i);
        diag += up;
        if i > 0 {
            row.push(((j, i - 1), -up));
        }
        let down = self.vertical_conductance(j, i + 1);
        diag += down;
        if i + 1 < self.nz {
            row.push(((j, i + 1), -down));
        }
        row.push(((j, i), diag));
        row
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Symmetric positive definite `K = -V (L_h - rho eta^2 / 4)`, where `L_h`
/// approximates `div(kappa grad)` and `V` is the cell volume.
pub fn assemble_interior_operator(medium: &MediumModel, lp: &LaguerreParams) -> Result<SparseMatrix> {
    medium.validate()?;
    lp.validate()?;
    let mut t = Vec::with_capacity(5 * medium.cells());
    for j in 0..medium.nr {
        for i in 0..medium.nz {
            let r = medium.index(j, i);
            t.extend(medium.operator_row(j, i, lp).into_iter().map(|((cj, ci), v)| (r, medium.index(cj, ci), v)));
        }
    }
    SparseMatrix::from_triplets(medium.cells(), medium.cells(), t)
}

/// Pointwise action `L_h u - rho eta^2/4 u` recovered from the operator.
pub fn pointwise_action(medium: &MediumModel, k: &SparseMatrix, u: &[f64]) -> Vec<f64> {
    let ku = k.matvec(u);
    (0..medium.cells()).map(|c| -ku[c] / medium.volume(c / medium.nz)).collect()
}

/// Damping profile of the absorbing layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmlParams {
    /// Layer width, m.
    pub width: f64,
    /// Velocity used in the profile, m/s.
    pub cp: f64,
    pub nu: u32,
    pub chi: f64,
    /// Depth where the layer starts, m.
    pub z0: f64,
}

impl PmlParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.cp > 0.0 && self.chi > 0.0 && self.chi < 1.0 && self.nu >= 1 && self.z0 >= 0.0) {
            return Err(Error::InvalidParameter("absorbing layer needs width > 0, cp > 0, 0 < chi < 1, nu >= 1".into()));
        }
        Ok(())
    }
}

/// `sigma(z) = (nu + 1) cp / (2 L) ln(1/|chi|) ((z - z0) / L)^nu` for
/// `z >= z0`, zero above the layer.
pub fn sigma_profile(z: f64, p: &PmlParams) -> f64 {
    if z <= p.z0 {
        return 0.0;
    }
    let s = (z - p.z0) / p.width;
    (f64::from(p.nu) + 1.0) * p.cp / (2.0 * p.width) * (1.0 / p.chi.abs()).ln() * s.powi(p.nu as i32)
}
