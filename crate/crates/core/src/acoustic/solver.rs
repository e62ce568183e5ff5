//! Per-harmonic solves, the harmonic loop, and receiver/snapshot output.

use std::path::Path;

use crate::block::{BlockTriMatrix, Matrix};
use crate::error::{mismatch, Error, Result};
use crate::io::write_atomic;
use crate::schur::{
    band_as_blocktrid, build_preconditioner, partition_numbering, schur_solve_with, BandMatrix, BandPreconditioner,
    NodeLabel, SchurOptions, SchurSystem, SeparableOperator, SolverKind, SparseMatrix, SubdomainBlock, SubdomainSolver,
};

use super::laguerre::{laguerre_weighted, reconstruct_time, LaguerreParams};
use super::medium::MediumModel;
use super::system::{assemble_pml_operator, AcousticOperator, HarmonicState, PmlLayer, Unknown};
use super::{source_coeffs, SourceSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum SolverChoice {
    /// The whole grid as one block-tridiagonal system over radial columns.
    Monolithic { ranks: usize },
    /// Depth rows listed in `interface_rows` form the interface; the runs
    /// between them and the absorbing layer are the subdomains.
    Schur { interface_rows: Vec<usize>, ranks: usize, options: SchurOptions },
}

#[derive(Debug)]
enum Inner {
    Direct(SubdomainSolver),
    Schur { sys: SchurSystem, order: Vec<usize>, options: SchurOptions, pc: Option<BandPreconditioner> },
}

#[derive(Debug)]
pub struct HarmonicSolver {
    inner: Inner,
    len: usize,
}

/// Block-tridiagonal matrix from entries whose rows and columns fall in the
/// same or adjacent blocks of order `m`.
pub fn blocktri_from_triplets(nb: usize, m: usize, t: &[(usize, usize, f64)]) -> Result<BlockTriMatrix> {
    let mut diag = vec![Matrix::zeros(m, m); nb];
    let mut lower = vec![Matrix::zeros(m, m); nb.saturating_sub(1)];
    let mut upper = vec![Matrix::zeros(m, m); nb.saturating_sub(1)];
    for &(r, c, v) in t {
        let (br, bc) = (r / m, c / m);
        if br >= nb || bc >= nb {
            return Err(mismatch("entry outside the block grid"));
        }
        let (i, k) = (r % m, c % m);
        if br == bc {
            diag[br][(i, k)] += v;
        } else if bc + 1 == br {
            lower[bc][(i, k)] -= v;
        } else if br + 1 == bc {
            upper[br][(i, k)] -= v;
        } else {
            return Err(mismatch(format!("entry ({r}, {c}) couples non-adjacent blocks")));
        }
    }
    BlockTriMatrix::new(diag, lower, upper)
}

fn same_entries(a: &[(usize, usize, f64)], b: &[(usize, usize, f64)]) -> bool {
    let clean = |t: &[(usize, usize, f64)]| {
        let mut v: Vec<_> = t.iter().copied().filter(|e| e.2 != 0.0).collect();
        v.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        v
    };
    let (a, b) = (clean(a), clean(b));
    let scale = a.iter().map(|e| e.2.abs()).fold(0.0, f64::max);
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| (x.0, x.1) == (y.0, y.1) && (x.2 - y.2).abs() <= 1e-12 * scale)
}

/// Separable operator matching `a` over `nz` rows per column, if one exists.
fn try_separable(nr: usize, nz: usize, a: &[(usize, usize, f64)]) -> Option<SeparableOperator> {
    if nz < 2 {
        return None;
    }
    let mut lower = vec![0.0; nr];
    let mut upper = vec![0.0; nr];
    let mut diag = vec![0.0; nr];
    let mut weight = vec![0.0; nr];
    let mut rows: Vec<Vec<(usize, f64)>> = vec![vec![]; nr * nz];
    for &(r, c, v) in a {
        rows[r].push((c, v));
    }
    let get = |r: usize, c: usize| rows[r].iter().filter(|e| e.0 == c).map(|e| e.1).sum::<f64>();
    for j in 0..nr {
        let r = j * nz;
        weight[j] = -get(r, r + 1);
        diag[j] = get(r, r) - 2.0 * weight[j];
        if j > 0 {
            lower[j] = get(r, r - nz);
        }
        if j + 1 < nr {
            upper[j] = get(r, r + nz);
        }
    }
    let op = SeparableOperator::new(nz, lower, diag, upper, weight).ok()?;
    same_entries(&op.triplets(), a).then_some(op)
}

impl HarmonicSolver {
    pub fn build(op: &AcousticOperator, choice: &SolverChoice) -> Result<Self> {
        let l = op.layout;
        let len = op.len();
        let inner = match choice {
            SolverChoice::Monolithic { ranks } => {
                let m = blocktri_from_triplets(l.nr, l.stride, &op.matrix.triplets())?;
                Inner::Direct(SubdomainSolver::block_tri(m, *ranks)?)
            }
            SolverChoice::Schur { interface_rows, ranks, options } => {
                let (sys, order) = schur_parts(op, interface_rows, *ranks)?;
                let pc = build_preconditioner(&sys, options.precond)?;
                Inner::Schur { sys, order, options: options.clone(), pc }
            }
        };
        Ok(HarmonicSolver { inner, len })
    }

    /// Solver kind of every subdomain (one entry for the direct path).
    pub fn kinds(&self) -> Vec<SolverKind> {
        match &self.inner {
            Inner::Direct(s) => vec![s.kind()],
            Inner::Schur { sys, .. } => sys.blocks.iter().map(|b| b.solver.kind()).collect(),
        }
    }

    pub fn schur_system(&self) -> Option<&SchurSystem> {
        match &self.inner {
            Inner::Schur { sys, .. } => Some(sys),
            Inner::Direct(_) => None,
        }
    }

    /// Solve with the harmonic matrix; returns the solution and the interface
    /// iteration count (zero on the direct path).
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        if b.len() != self.len {
            return Err(mismatch("harmonic rhs length"));
        }
        match &self.inner {
            Inner::Direct(s) => Ok((s.solve(b)?, 0)),
            Inner::Schur { sys, order, options, pc } => {
                let f: Vec<f64> = order.iter().map(|&k| b[k]).collect();
                let sol = schur_solve_with(sys, &f, options, pc.as_ref())?;
                if !sol.stats.converged {
                    return Err(Error::Breakdown { iteration: sol.stats.iterations, reason: "interface iteration did not converge" });
                }
                let mut x = vec![0.0; self.len];
                for (v, &k) in sol.to_flat().into_iter().zip(order) {
                    x[k] = v;
                }
                Ok((x, sol.stats.iterations))
            }
        }
    }
}

/// Split the harmonic system into subdomains along the interface rows.
fn schur_parts(op: &AcousticOperator, interface_rows: &[usize], ranks: usize) -> Result<(SchurSystem, Vec<usize>)> {
    let l = op.layout;
    let mut is_iface = vec![false; l.nz_int];
    for &i in interface_rows {
        if i >= l.nz_int {
            return Err(Error::InvalidParameter(format!("interface row {i} is not above the absorbing layer")));
        }
        is_iface[i] = true;
    }
    if !is_iface.iter().any(|&b| b) {
        return Err(Error::InvalidParameter("no interface rows".into()));
    }
    if op.pml.is_some() && !is_iface[l.nz_int - 1] {
        return Err(Error::InvalidParameter("the row above the absorbing layer must be an interface row".into()));
    }
    let mut segments: Vec<(usize, usize)> = vec![];
    let mut row_label = vec![NodeLabel::Interface; l.nz_int];
    for i in 0..l.nz_int {
        if is_iface[i] {
            continue;
        }
        match segments.last_mut() {
            Some(s) if s.1 == i => s.1 += 1,
            _ => segments.push((i, i + 1)),
        }
        row_label[i] = NodeLabel::Interior(segments.len() - 1);
    }
    let pml_label = segments.len();
    let labels: Vec<Option<NodeLabel>> = (0..l.len())
        .map(|k| {
            Some(match l.unknown(k) {
                Unknown::P(_, i) if i < l.nz_int => row_label[i],
                _ => NodeLabel::Interior(pml_label),
            })
        })
        .collect();
    let numbering = partition_numbering(&labels)?;
    let pos = numbering.positions();
    let nsub = numbering.interior.len();
    let mut starts = vec![0; nsub + 1];
    for s in 0..nsub {
        starts[s + 1] = starts[s] + numbering.interior[s];
    }
    let gamma = starts[nsub];
    let ng = numbering.interface;
    let owner = |p: usize| if p >= gamma { None } else { Some(starts.partition_point(|&s| s <= p) - 1) };
    let mut a_ii = vec![vec![]; nsub];
    let mut a_ig = vec![vec![]; nsub];
    let mut a_gi = vec![vec![]; nsub];
    let mut a_gg = vec![];
    for (r, c, v) in op.matrix.triplets() {
        let (pr, pc) = (pos[r], pos[c]);
        match (owner(pr), owner(pc)) {
            (Some(s), Some(t)) if s == t => a_ii[s].push((pr - starts[s], pc - starts[s], v)),
            (Some(s), Some(t)) => {
                return Err(Error::InvalidParameter(format!("subdomains {s} and {t} touch without an interface row")))
            }
            (Some(s), None) => a_ig[s].push((pr - starts[s], pc - gamma, v)),
            (None, Some(s)) => a_gi[s].push((pr - gamma, pc - starts[s], v)),
            (None, None) => a_gg.push((pr - gamma, pc - gamma, v)),
        }
    }
    let mut blocks = Vec::with_capacity(nsub);
    for s in 0..nsub {
        let n = numbering.interior[s];
        let local = std::mem::take(&mut a_ii[s]);
        let (solver, sym_ii) = if s == pml_label && op.pml.is_some() {
            let block = 3 * l.pml_rows();
            let mut band = BandMatrix::zeros(n, block - 1);
            for &(r, c, v) in &local {
                band.set(r, c, band.get(r, c) + v);
            }
            (SubdomainSolver::block_tri(band_as_blocktrid(&band, block)?, ranks)?, false)
        } else {
            let rows = segments[s].1 - segments[s].0;
            let sym = SparseMatrix::from_triplets(n, n, local.clone())?;
            let sym = sym.is_transpose_of(&sym);
            match try_separable(l.nr, rows, &local) {
                Some(sep) => (SubdomainSolver::Separable(Box::new(sep)), sym),
                None => (SubdomainSolver::block_tri(blocktri_from_triplets(l.nr, rows, &local)?, ranks)?, sym),
            }
        };
        let ig = SparseMatrix::from_triplets(n, ng, std::mem::take(&mut a_ig[s]))?;
        let gi = SparseMatrix::from_triplets(ng, n, std::mem::take(&mut a_gi[s]))?;
        let symmetric = sym_ii && gi.is_transpose_of(&ig);
        blocks.push(SubdomainBlock::new(s, solver, ig, gi, symmetric)?);
    }
    let sys = SchurSystem::new(blocks, SparseMatrix::from_triplets(ng, ng, a_gg)?)?;
    Ok((sys, numbering.order))
}

/// Solve harmonic `state.m` and advance the state. Returns the interface
/// iteration count.
pub fn solve_harmonic(op: &AcousticOperator, solver: &HarmonicSolver, state: &mut HarmonicState, fm: f64) -> Result<usize> {
    let m = state.m;
    let wrap = |e: Error| Error::SolverFailure { harmonic: m, source: Box::new(e) };
    let b = op.rhs(fm, state).map_err(wrap)?;
    let (x, its) = solver.solve(&b).map_err(wrap)?;
    op.advance(state, x)?;
    Ok(its)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub medium: MediumModel,
    pub pml: Option<PmlLayer>,
    pub lp: LaguerreParams,
    pub source: SourceSpec,
    pub solver: SolverChoice,
    /// Receivers as `(r, z)` in meters.
    pub gauges: Vec<(f64, f64)>,
    pub trace_times: Vec<f64>,
    pub snapshot_times: Vec<f64>,
}

/// Pressure field at one time, stored depth row by depth row
/// (`values[i * nr + j]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub nz: usize,
    pub nr: usize,
    pub hz: f64,
    pub hr: f64,
    pub harmonic_count: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    /// Pressure coefficients per gauge and harmonic.
    pub gauge_coeffs: Vec<Vec<f64>>,
    /// Reconstructed pressure per gauge at `trace_times`.
    pub traces: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    /// Interface iterations per harmonic.
    pub iterations: Vec<usize>,
    pub solver_kinds: Vec<SolverKind>,
}

/// Run all harmonics and reconstruct gauges and snapshots.
pub fn run_model(cfg: &ModelConfig) -> Result<ModelOutput> {
    let lp = &cfg.lp;
    let clock = std::time::Instant::now();
    let fm = source_coeffs(&cfg.source, lp)?;
    log::debug!("source transform: {:.3} s", clock.elapsed().as_secs_f64());
    let op = assemble_pml_operator(&cfg.medium, lp, cfg.pml.as_ref(), cfg.source.depth)?;
    log::debug!("operator assembly: {:.3} s", clock.elapsed().as_secs_f64());
    let solver = HarmonicSolver::build(&op, &cfg.solver)?;
    log::debug!("operator and solver setup: {:.3} s", clock.elapsed().as_secs_f64());
    let med = &cfg.medium;
    let gauge_idx: Vec<usize> = cfg
        .gauges
        .iter()
        .map(|&(r, z)| op.layout.index(Unknown::P(med.column_at(r), med.row_at(z))))
        .collect();
    let weights: Vec<Vec<f64>> = cfg
        .snapshot_times
        .iter()
        .map(|&t| laguerre_weighted(lp.nterms, lp.alpha, lp.eta * t, f64::from(lp.alpha)))
        .collect();
    let pidx = op.layout.pressure_indices();
    let mut fields = vec![vec![0.0; med.cells()]; cfg.snapshot_times.len()];
    let mut gauge_coeffs = vec![Vec::with_capacity(lp.nterms); gauge_idx.len()];
    let mut iterations = Vec::with_capacity(lp.nterms);
    let mut state = op.new_state();
    for (m, &f) in fm.iter().enumerate() {
        iterations.push(solve_harmonic(&op, &solver, &mut state, f)?);
        let x = &state.last;
        for (g, &k) in gauge_coeffs.iter_mut().zip(&gauge_idx) {
            g.push(x[k]);
        }
        for (field, w) in fields.iter_mut().zip(&weights) {
            if w[m] != 0.0 {
                field.iter_mut().zip(&pidx).for_each(|(v, &k)| *v += w[m] * x[k]);
            }
        }
    }
    log::debug!("harmonics done: {:.3} s", clock.elapsed().as_secs_f64());
    let traces = gauge_coeffs
        .iter()
        .map(|c| {
            let cols: Vec<Vec<f64>> = c.iter().map(|&v| vec![v]).collect();
            Ok(reconstruct_time(&cols, lp, &cfg.trace_times)?.into_iter().map(|v| v[0]).collect())
        })
        .collect::<Result<_>>()?;
    let snapshots = cfg
        .snapshot_times
        .iter()
        .zip(fields)
        .map(|(&t, f)| {
            let mut values = vec![0.0; f.len()];
            for j in 0..med.nr {
                for i in 0..med.nz {
                    values[i * med.nr + j] = f[med.index(j, i)];
                }
            }
            Snapshot { t, nz: med.nz, nr: med.nr, hz: med.hz, hr: med.hr, harmonic_count: lp.nterms, values }
        })
        .collect();
    Ok(ModelOutput { gauge_coeffs, traces, snapshots, iterations, solver_kinds: solver.kinds() })
}

/// Write `<stem>.bin` (little-endian doubles) and `<stem>.txt`.
pub fn write_snapshot(dir: &Path, stem: &str, s: &Snapshot) -> Result<()> {
    let bytes: Vec<u8> = s.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&dir.join(format!("{stem}.bin")), &bytes)?;
    let desc = format!(
        "nz = {}\nnr = {}\nhz = {:e}\nhr = {:e}\nt = {:e}\nharmonic_count = {}\nlayout = depth-major f64 little-endian\n",
        s.nz, s.nr, s.hz, s.hr, s.t, s.harmonic_count
    );
    write_atomic(&dir.join(format!("{stem}.txt")), desc.as_bytes())
}

/// Receiver traces as CSV: `t` then one column per gauge.
pub fn gauges_csv(times: &[f64], traces: &[Vec<f64>], gauges: &[(f64, f64)]) -> String {
    let mut out = String::from("t");
    for (r, z) in gauges {
        out.push_str(&format!(",r{r}_z{z}"));
    }
    out.push('\n');
    for (k, t) in times.iter().enumerate() {
        out.push_str(&format!("{t:e}"));
        for tr in traces {
            out.push_str(&format!(",{:e}", tr[k]));
        }
        out.push('\n');
    }
    out
}
