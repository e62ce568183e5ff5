//! Global per-harmonic system: second-order pressure equation above the
//! absorbing layer, first-order pressure/velocity form inside it.
//!
//! Unknowns are grouped by radial column. A column holds the pressure of the
//! `nz_int` upper rows, then `(P, R, Z)` for every layer row, where `R` lives
//! on the outer radial face of the cell and `Z` on its top face. The layer
//! bottom is a rigid wall (`Z = 0`).

use crate::error::{Error, Result};
use crate::schur::{BandMatrix, SparseMatrix};

use super::laguerre::{LaguerreParams, PhiAccumulator};
use super::medium::{sigma_profile, MediumModel, PmlParams};

/// Absorbing layer occupying the bottom `rows` rows of the medium.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmlLayer {
    pub rows: usize,
    pub cp: f64,
    pub nu: u32,
    pub chi: f64,
    /// With `false` the layer keeps its first-order form but `sigma = 0`.
    pub damped: bool,
}

impl PmlLayer {
    pub fn new(rows: usize, cp: f64, nu: u32, chi: f64) -> Self {
        PmlLayer { rows, cp, nu, chi, damped: true }
    }

    pub fn params(&self, medium: &MediumModel) -> PmlParams {
        let nz_int = medium.nz - self.rows;
        PmlParams { width: self.rows as f64 * medium.hz, cp: self.cp, nu: self.nu, chi: self.chi, z0: nz_int as f64 * medium.hz }
    }

    fn sigma(&self, medium: &MediumModel, z: f64) -> f64 {
        if self.damped {
            sigma_profile(z, &self.params(medium))
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unknown {
    /// Pressure at cell `(j, i)`.
    P(usize, usize),
    /// Radial velocity on the outer face of layer cell `(j, q)`.
    R(usize, usize),
    /// Vertical velocity on the top face of layer cell `(j, q)`.
    Z(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub nr: usize,
    pub nz: usize,
    pub nz_int: usize,
    pub stride: usize,
}

impl Layout {
    pub fn new(nr: usize, nz: usize, pml_rows: usize) -> Self {
        let nz_int = nz - pml_rows;
        Layout { nr, nz, nz_int, stride: nz_int + 3 * pml_rows }
    }

    pub fn len(&self) -> usize {
        self.nr * self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pml_rows(&self) -> usize {
        self.nz - self.nz_int
    }

    pub fn index(&self, u: Unknown) -> usize {
        match u {
            Unknown::P(j, i) if i < self.nz_int => j * self.stride + i,
            Unknown::P(j, i) => j * self.stride + self.nz_int + 3 * (i - self.nz_int),
            Unknown::R(j, q) => j * self.stride + self.nz_int + 3 * q + 1,
            Unknown::Z(j, q) => j * self.stride + self.nz_int + 3 * q + 2,
        }
    }

    pub fn unknown(&self, idx: usize) -> Unknown {
        let (j, o) = (idx / self.stride, idx % self.stride);
        if o < self.nz_int {
            return Unknown::P(j, o);
        }
        let (q, f) = ((o - self.nz_int) / 3, (o - self.nz_int) % 3);
        match f {
            0 => Unknown::P(j, self.nz_int + q),
            1 => Unknown::R(j, q),
            _ => Unknown::Z(j, q),
        }
    }

    /// Global index of the pressure at every cell, in medium order.
    pub fn pressure_indices(&self) -> Vec<usize> {
        (0..self.nr).flat_map(|j| (0..self.nz).map(move |i| (j, i))).map(|(j, i)| self.index(Unknown::P(j, i))).collect()
    }
}

/// Running sums carried from harmonic to harmonic.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicState {
    /// Harmonics solved so far.
    pub m: usize,
    /// All unknowns: history sums for the pressure above the layer and the
    /// `Phi` sums of `P`, `R`, `Z` inside it.
    pub fields: PhiAccumulator,
    /// `Q` at the `R` positions, zero elsewhere.
    pub q: PhiAccumulator,
    pub last: Vec<f64>,
}

impl HarmonicState {
    pub fn new(len: usize) -> Self {
        HarmonicState { m: 0, fields: PhiAccumulator::new(len), q: PhiAccumulator::new(len), last: vec![0.0; len] }
    }
}

#[derive(Clone, Debug)]
pub struct AcousticOperator {
    pub medium: MediumModel,
    pub lp: LaguerreParams,
    pub pml: Option<PmlLayer>,
    pub layout: Layout,
    pub matrix: SparseMatrix,
    /// Cell receiving the source load.
    pub source_cell: (usize, usize),
}

/// Assemble the coupled system for a medium whose bottom `pml.rows` rows are
/// an absorbing layer (or no layer). `source_depth` picks the on-axis cell.
pub fn assemble_pml_operator(
    medium: &MediumModel,
    lp: &LaguerreParams,
    pml: Option<&PmlLayer>,
    source_depth: f64,
) -> Result<AcousticOperator> {
    medium.validate()?;
    lp.validate()?;
    let rows = pml.map_or(0, |p| p.rows);
    if let Some(p) = pml {
        if p.rows == 0 || p.rows >= medium.nz {
            return Err(Error::InvalidParameter(format!("layer of {} rows in a grid of {}", p.rows, medium.nz)));
        }
        p.params(medium).validate()?;
    }
    let layout = Layout::new(medium.nr, medium.nz, rows);
    let source_cell = (0, medium.row_at(source_depth));
    if source_cell.1 >= layout.nz_int {
        return Err(Error::InvalidParameter("source lies inside the absorbing layer".into()));
    }
    let eta = lp.eta;
    let id = |u| layout.index(u);
    let mut t = Vec::with_capacity(7 * layout.len());
    for j in 0..medium.nr {
        for i in 0..layout.nz_int {
            let r = id(Unknown::P(j, i));
            t.extend(medium.operator_row(j, i, lp).into_iter().map(|((cj, ci), v)| (r, id(Unknown::P(cj, ci)), v)));
        }
        let Some(p) = pml else { continue };
        let hz = medium.hz;
        for q in 0..rows {
            let i = layout.nz_int + q;
            let c = medium.index(j, i);
            let (pr, rr, zr) = (id(Unknown::P(j, i)), id(Unknown::R(j, q)), id(Unknown::Z(j, q)));
            // pressure: rho (eta/2 + s) V P - [(1 + 2s/eta) div_r R + div_z Z]
            let sc = p.sigma(medium, medium.depth(i));
            let s = 1.0 + 2.0 * sc / eta;
            let area_out = (j + 1) as f64 * medium.hr * hz;
            let area_z = medium.radius(j) * medium.hr;
            t.push((pr, pr, medium.rho[c] * (0.5 * eta + sc) * medium.volume(j)));
            t.push((pr, rr, -s * area_out));
            if j > 0 {
                t.push((pr, id(Unknown::R(j - 1, q)), s * j as f64 * medium.hr * hz));
            }
            t.push((pr, zr, area_z));
            if q + 1 < rows {
                t.push((pr, id(Unknown::Z(j, q + 1)), -area_z));
            }
            // radial velocity: eta/2 R - kappa dP/dr
            let g = medium.radial_face_kappa(j, i) / medium.radial_face_dist(j);
            t.push((rr, rr, 0.5 * eta));
            if g != 0.0 {
                t.push((rr, pr, g));
                if j + 1 < medium.nr {
                    t.push((rr, id(Unknown::P(j + 1, i)), -g));
                }
            }
            // vertical velocity on the top face: (eta/2 + s_f) Z - kappa dP/dz
            let sf = p.sigma(medium, i as f64 * hz);
            let above = medium.index(j, i - 1);
            let kf = 2.0 * medium.kappa[c] * medium.kappa[above] / (medium.kappa[c] + medium.kappa[above]) / hz;
            t.push((zr, zr, 0.5 * eta + sf));
            t.push((zr, pr, -kf));
            t.push((zr, id(Unknown::P(j, i - 1)), kf));
        }
    }
    let matrix = SparseMatrix::from_triplets(layout.len(), layout.len(), t)?;
    Ok(AcousticOperator { medium: medium.clone(), lp: *lp, pml: pml.copied(), layout, matrix, source_cell })
}

impl AcousticOperator {
    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn new_state(&self) -> HarmonicState {
        HarmonicState::new(self.len())
    }

    /// Right-hand side of harmonic `state.m` for source coefficient `fm`.
    pub fn rhs(&self, fm: f64, state: &HarmonicState) -> Result<Vec<f64>> {
        if state.fields.len() != self.len() {
            return Err(crate::error::mismatch("state does not match the operator"));
        }
        let (m, lp, l) = (&self.medium, &self.lp, &self.layout);
        let mut b = vec![0.0; self.len()];
        let hist = state.fields.history(lp);
        for j in 0..m.nr {
            for i in 0..l.nz_int {
                let k = l.index(Unknown::P(j, i));
                b[k] = -m.rho[m.index(j, i)] * m.volume(j) * hist[k];
            }
        }
        if let Some(p) = &self.pml {
            let phi = state.fields.phi(lp);
            let phq = state.q.phi(lp);
            let eta = lp.eta;
            for j in 0..m.nr {
                for q in 0..p.rows {
                    let i = l.nz_int + q;
                    let (pr, rr, zr) = (l.index(Unknown::P(j, i)), l.index(Unknown::R(j, q)), l.index(Unknown::Z(j, q)));
                    let sc = p.sigma(m, m.depth(i));
                    let mut div_q = (j + 1) as f64 * m.hr * m.hz * phq[rr];
                    if j > 0 {
                        div_q -= j as f64 * m.hr * m.hz * phq[l.index(Unknown::R(j - 1, q))];
                    }
                    b[pr] = -m.rho[m.index(j, i)] * m.volume(j) * phi[pr] - 2.0 * sc / eta * div_q;
                    b[rr] = -phi[rr];
                    b[zr] = -phi[zr];
                }
            }
        }
        let (sj, si) = self.source_cell;
        b[l.index(Unknown::P(sj, si))] += fm / (2.0 * std::f64::consts::PI);
        Ok(b)
    }

    /// Record the solution of harmonic `state.m`.
    pub fn advance(&self, state: &mut HarmonicState, x: Vec<f64>) -> Result<()> {
        if x.len() != self.len() {
            return Err(crate::error::mismatch("solution length"));
        }
        let lp = &self.lp;
        state.fields.push(lp, &x)?;
        if self.pml.is_some() {
            let phq = state.q.phi(lp);
            let mut qm = vec![0.0; x.len()];
            for (k, v) in qm.iter_mut().enumerate() {
                if let Unknown::R(..) = self.layout.unknown(k) {
                    *v = 2.0 / lp.eta * (x[k] - phq[k]);
                }
            }
            state.q.push(lp, &qm)?;
        }
        state.last = x;
        state.m += 1;
        Ok(())
    }

    /// Pressure of a solution vector in medium order `j * nz + i`.
    pub fn pressure(&self, x: &[f64]) -> Vec<f64> {
        self.layout.pressure_indices().into_iter().map(|k| x[k]).collect()
    }

    /// The absorbing-layer block as a band matrix over its own unknowns,
    /// column by column; `None` without a layer.
    pub fn pml_band(&self) -> Option<BandMatrix> {
        let p = self.pml.as_ref()?;
        let l = &self.layout;
        let block = 3 * p.rows;
        let local = |k: usize| {
            let (j, o) = (k / l.stride, k % l.stride);
            (o >= l.nz_int).then(|| j * block + o - l.nz_int)
        };
        let mut band = BandMatrix::zeros(block * l.nr, block.saturating_sub(1));
        for (r, c, v) in self.matrix.triplets() {
            if let (Some(a), Some(b)) = (local(r), local(c)) {
                band.set(a, b, v);
            }
        }
        Some(band)
    }
}
