//! Non-overlapping domain decomposition through the interface Schur
//! complement `S = A_GG - sum_i A_Gi A_ii^{-1} A_iG`.
//!
//! Unknowns are numbered interior of subdomain 1, ..., interior of the last
//! subdomain, then the interface. `S` is never formed; the interface system is
//! solved by CG (or GMRES when a subdomain is unsymmetric) with an optional
//! probed band preconditioner.

pub mod band;
pub mod krylov;
pub mod separable;

use rayon::prelude::*;

use crate::block::{thomas_factor, BlockLU, BlockTriMatrix, BlockVector, Matrix, ThomasFactorization};
use crate::dichotomy::{plan_build, DichotomyPlan};
use crate::error::{mismatch, Error, Result};

pub use band::{band_as_blocktrid, precond_apply, probing_build, BandMatrix, BandPreconditioner};
pub use krylov::{cg_solve, gmres_solve, CgStats};
pub use separable::{SeparableOperator, Stencil, ZBoundary};

/// Node label for [`partition_numbering`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeLabel {
    Interior(usize),
    Interface,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Numbering {
    /// `order[new] = old`.
    pub order: Vec<usize>,
    /// Interior node count per subdomain.
    pub interior: Vec<usize>,
    pub interface: usize,
}

impl Numbering {
    /// `position[old] = new`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (new, &old) in self.order.iter().enumerate() {
            pos[old] = new;
        }
        pos
    }
}

/// Interior nodes of subdomain 0, 1, ... in mesh order, then interface nodes.
pub fn partition_numbering(labels: &[Option<NodeLabel>]) -> Result<Numbering> {
    let mut subdomains = 0;
    for (i, l) in labels.iter().enumerate() {
        match l {
            None => return Err(Error::UnlabeledNode(i)),
            Some(NodeLabel::Interior(s)) => subdomains = subdomains.max(s + 1),
            Some(NodeLabel::Interface) => {}
        }
    }
    let mut order = Vec::with_capacity(labels.len());
    let mut interior = vec![0; subdomains];
    for (s, count) in interior.iter_mut().enumerate() {
        for (i, l) in labels.iter().enumerate() {
            if *l == Some(NodeLabel::Interior(s)) {
                order.push(i);
                *count += 1;
            }
        }
    }
    let before = order.len();
    order.extend((0..labels.len()).filter(|&i| labels[i] == Some(NodeLabel::Interface)));
    Ok(Numbering { interface: order.len() - before, order, interior })
}

/// Compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix { rows, cols, indptr: vec![0; rows + 1], indices: vec![], values: vec![] }
    }

    /// Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut t: Vec<(usize, usize, f64)>) -> Result<Self> {
        if t.iter().any(|&(r, c, _)| r >= rows || c >= cols) {
            return Err(mismatch("triplet outside the matrix"));
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let (mut indices, mut values): (Vec<usize>, Vec<f64>) = (vec![], vec![]);
        let mut last = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseMatrix { rows, cols, indptr, indices, values })
    }

    pub fn from_dense(a: &Matrix) -> Self {
        let mut t = vec![];
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.rows(), a.cols(), t).expect("indices in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).collect()
    }

    pub fn transpose(&self) -> Self {
        let t = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.cols, self.rows, t).expect("indices in range")
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut a = Matrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            a[(r, c)] = v;
        }
        a
    }

    /// Rows holding a nonzero.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.indptr[r + 1] > self.indptr[r]).collect()
    }

    pub fn is_transpose_of(&self, other: &SparseMatrix) -> bool {
        *self == other.transpose()
    }
}

/// How `A_ii` is solved.
#[derive(Clone, Debug)]
pub enum SubdomainSolver {
    Dense { matrix: Matrix, lu: BlockLU },
    /// Block-tridiagonal interior, unknowns numbered block by block.
    BlockTri { matrix: BlockTriMatrix, plan: Box<DichotomyPlan> },
    /// Sequential block elimination; used for small unsymmetric blocks.
    Thomas { matrix: BlockTriMatrix, factor: ThomasFactorization },
    Separable(Box<SeparableOperator>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Dense,
    BlockTri,
    Thomas,
    Separable,
}

impl SubdomainSolver {
    pub fn dense(matrix: Matrix) -> Result<Self> {
        let lu = crate::block::lu_factor(&matrix)?;
        Ok(SubdomainSolver::Dense { matrix, lu })
    }

    pub fn block_tri(matrix: BlockTriMatrix, ranks: usize) -> Result<Self> {
        let plan = plan_build(&matrix, ranks.clamp(1, matrix.n()))?;
        Ok(SubdomainSolver::BlockTri { matrix, plan: Box::new(plan) })
    }

    pub fn thomas(matrix: BlockTriMatrix) -> Result<Self> {
        let factor = thomas_factor(&matrix)?;
        Ok(SubdomainSolver::Thomas { matrix, factor })
    }

    pub fn kind(&self) -> SolverKind {
        match self {
            SubdomainSolver::Dense { .. } => SolverKind::Dense,
            SubdomainSolver::BlockTri { .. } => SolverKind::BlockTri,
            SubdomainSolver::Thomas { .. } => SolverKind::Thomas,
            SubdomainSolver::Separable(_) => SolverKind::Separable,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SubdomainSolver::Dense { matrix, .. } => matrix.rows(),
            SubdomainSolver::BlockTri { matrix, .. } | SubdomainSolver::Thomas { matrix, .. } => {
                matrix.n() * matrix.m()
            }
            SubdomainSolver::Separable(op) => op.dim(),
        }
    }

    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.dim() {
            return Err(mismatch("subdomain rhs length"));
        }
        match self {
            SubdomainSolver::Dense { lu, .. } => lu.solve_vec(f),
            SubdomainSolver::BlockTri { matrix, plan } => {
                Ok(plan.solve(&BlockVector::from_flat(matrix.n(), matrix.m(), f)?)?.to_flat())
            }
            SubdomainSolver::Thomas { matrix, factor } => {
                Ok(factor.solve(&BlockVector::from_flat(matrix.n(), matrix.m(), f)?)?.to_flat())
            }
            SubdomainSolver::Separable(op) => op.solve(f),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SubdomainSolver::Dense { matrix, .. } => Ok(matrix.matvec(x)),
            SubdomainSolver::BlockTri { matrix, .. } | SubdomainSolver::Thomas { matrix, .. } => {
                Ok(matrix.apply(&BlockVector::from_flat(matrix.n(), matrix.m(), x)?)?.to_flat())
            }
            SubdomainSolver::Separable(op) => Ok(op.apply(x)),
        }
    }

    /// Entries `(row, col, value)` of `A_ii`.
    pub fn triplets(&self) -> Result<Vec<(usize, usize, f64)>> {
        Ok(match self {
            SubdomainSolver::Dense { matrix, .. } => SparseMatrix::from_dense(matrix).triplets(),
            SubdomainSolver::BlockTri { matrix, .. } | SubdomainSolver::Thomas { matrix, .. } => {
                let (n, m) = (matrix.n(), matrix.m());
                let mut t = vec![];
                let mut push = |bi: usize, bj: usize, b: &Matrix, s: f64| {
                    for r in 0..m {
                        for c in 0..m {
                            if b[(r, c)] != 0.0 {
                                t.push((bi * m + r, bj * m + c, s * b[(r, c)]));
                            }
                        }
                    }
                };
                for j in 0..n {
                    push(j, j, matrix.diag(j), 1.0);
                    if j > 0 {
                        push(j, j - 1, matrix.lower(j), -1.0);
                    }
                    if j + 1 < n {
                        push(j, j + 1, matrix.upper(j), -1.0);
                    }
                }
                t
            }
            SubdomainSolver::Separable(op) => op.triplets(),
        })
    }
}

/// `A_ii` with its couplings to the interface.
#[derive(Clone, Debug)]
pub struct SubdomainBlock {
    pub label: usize,
    pub solver: SubdomainSolver,
    /// `A_iG`: interior rows by interface columns.
    pub a_ig: SparseMatrix,
    /// `A_Gi`: interface rows by interior columns.
    pub a_gi: SparseMatrix,
    pub symmetric: bool,
}

impl SubdomainBlock {
    /// Symmetric coupling: `A_Gi = A_iG^T`.
    pub fn symmetric(label: usize, solver: SubdomainSolver, a_ig: SparseMatrix) -> Result<Self> {
        let a_gi = a_ig.transpose();
        Self::new(label, solver, a_ig, a_gi, true)
    }

    pub fn new(label: usize, solver: SubdomainSolver, a_ig: SparseMatrix, a_gi: SparseMatrix, symmetric: bool) -> Result<Self> {
        let n = solver.dim();
        if a_ig.rows() != n || a_gi.cols() != n || a_ig.cols() != a_gi.rows() {
            return Err(mismatch(format!("subdomain {label} couplings do not match its size {n}")));
        }
        Ok(SubdomainBlock { label, solver, a_ig, a_gi, symmetric })
    }

    pub fn dim(&self) -> usize {
        self.solver.dim()
    }

    fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(f).map_err(|e| Error::SubdomainSolveFailure { index: self.label, reason: e.to_string() })
    }

    /// `A_Gi A_ii^{-1} A_iG g` through the generic path.
    pub fn boundary_product(&self, g: &[f64]) -> Result<Vec<f64>> {
        Ok(self.a_gi.matvec(&self.solve(&self.a_ig.matvec(g))?))
    }
}

/// Same value as [`SubdomainBlock::boundary_product`] for a separable block,
/// with transforms restricted to the coupled rows and columns. Returns the
/// product and the multiply-add count.
pub fn boundary_schur_product_fast(block: &SubdomainBlock, g: &[f64]) -> Result<(Vec<f64>, u64)> {
    let SubdomainSolver::Separable(op) = &block.solver else {
        return Err(Error::NotSeparable(format!("subdomain {} has no separable solver", block.label)));
    };
    if g.len() != block.a_ig.cols() {
        return Err(mismatch("boundary data length"));
    }
    let src = block.a_ig.matvec(g);
    let rows = block.a_ig.nonzero_rows();
    let input: Vec<(usize, f64)> = rows.iter().map(|&r| (r, src[r])).filter(|e| e.1 != 0.0).collect();
    let needed = block.a_gi.transpose().nonzero_rows();
    let (vals, mut ops) = op.restricted_solve(&input, &needed)?;
    let mut trace = vec![0.0; block.dim()];
    for (i, v) in needed.iter().zip(vals) {
        trace[*i] = v;
    }
    let out = (0..block.a_gi.rows())
        .map(|r| block.a_gi.row(r).map(|(c, v)| v * trace[c]).sum())
        .collect();
    ops += (block.a_ig.nnz() + block.a_gi.nnz()) as u64;
    Ok((out, ops))
}

#[derive(Clone, Debug)]
pub struct SchurSystem {
    pub blocks: Vec<SubdomainBlock>,
    pub a_gg: SparseMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preconditioner {
    None,
    /// Probing with `d = 0`: row sums of `S` on the diagonal.
    Diagonal,
    /// Probed band of half-width `d`, solved by a dichotomy plan on `ranks`.
    Probing { d: usize, ranks: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchurOptions {
    pub tol: f64,
    /// Defaults to `10 sqrt(n_G)`.
    pub maxit: Option<usize>,
    pub precond: Preconditioner,
    pub restart: usize,
}

impl Default for SchurOptions {
    fn default() -> Self {
        SchurOptions { tol: 1e-8, maxit: None, precond: Preconditioner::Diagonal, restart: 40 }
    }
}

#[derive(Clone, Debug)]
pub struct SchurSolution {
    pub interiors: Vec<Vec<f64>>,
    pub interface: Vec<f64>,
    pub stats: CgStats,
    /// True when GMRES was used.
    pub unsymmetric: bool,
    /// True when a probed preconditioner fell back to diagonal scaling.
    pub precond_fallback: bool,
}

impl SchurSolution {
    /// Concatenated in the interior-then-interface numbering.
    pub fn to_flat(&self) -> Vec<f64> {
        self.interiors.iter().flatten().chain(&self.interface).copied().collect()
    }
}

impl SchurSystem {
    pub fn new(blocks: Vec<SubdomainBlock>, a_gg: SparseMatrix) -> Result<Self> {
        let ng = a_gg.rows();
        if a_gg.cols() != ng || blocks.iter().any(|b| b.a_ig.cols() != ng) {
            return Err(mismatch("interface dimensions differ"));
        }
        Ok(SchurSystem { blocks, a_gg })
    }

    pub fn interface_dim(&self) -> usize {
        self.a_gg.rows()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(SubdomainBlock::dim).sum::<usize>() + self.interface_dim()
    }

    pub fn is_symmetric(&self) -> bool {
        self.blocks.iter().all(|b| b.symmetric) && self.a_gg.is_transpose_of(&self.a_gg)
    }

    /// Split a full-ordering vector into interior pieces and the interface part.
    pub fn split<'a>(&self, f: &'a [f64]) -> Result<(Vec<&'a [f64]>, &'a [f64])> {
        if f.len() != self.dim() {
            return Err(mismatch(format!("vector of {} for system of {}", f.len(), self.dim())));
        }
        let mut at = 0;
        let parts = self
            .blocks
            .iter()
            .map(|b| {
                let s = &f[at..at + b.dim()];
                at += b.dim();
                s
            })
            .collect();
        Ok((parts, &f[at..]))
    }

    /// Full operator in the interior-then-interface numbering.
    pub fn assemble(&self) -> Result<SparseMatrix> {
        let n = self.dim();
        let gamma = n - self.interface_dim();
        let mut t = vec![];
        let mut at = 0;
        for b in &self.blocks {
            t.extend(b.solver.triplets()?.into_iter().map(|(r, c, v)| (at + r, at + c, v)));
            t.extend(b.a_ig.triplets().into_iter().map(|(r, c, v)| (at + r, gamma + c, v)));
            t.extend(b.a_gi.triplets().into_iter().map(|(r, c, v)| (gamma + r, at + c, v)));
            at += b.dim();
        }
        t.extend(self.a_gg.triplets().into_iter().map(|(r, c, v)| (gamma + r, gamma + c, v)));
        SparseMatrix::from_triplets(n, n, t)
    }

    fn sum_over_blocks(&self, per_block: impl Fn(&SubdomainBlock) -> Result<Vec<f64>> + Sync + Send) -> Result<Vec<f64>> {
        let parts: Vec<Vec<f64>> = self.blocks.par_iter().map(per_block).collect::<Result<_>>()?;
        let mut acc = vec![0.0; self.interface_dim()];
        for p in parts {
            acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        Ok(acc)
    }
}

/// `S xg = A_GG xg - sum_i A_Gi A_ii^{-1} A_iG xg`.
pub fn schur_apply(sys: &SchurSystem, xg: &[f64]) -> Result<Vec<f64>> {
    if xg.len() != sys.interface_dim() {
        return Err(mismatch("interface vector length"));
    }
    let corr = sys.sum_over_blocks(|b| b.boundary_product(xg))?;
    Ok(sys.a_gg.matvec(xg).iter().zip(corr).map(|(a, c)| a - c).collect())
}

/// `f_G - sum_i A_Gi A_ii^{-1} f_i`.
pub fn schur_rhs(sys: &SchurSystem, f: &[f64]) -> Result<Vec<f64>> {
    let (parts, fg) = sys.split(f)?;
    let corr: Vec<Vec<f64>> = sys
        .blocks
        .par_iter()
        .zip(parts)
        .map(|(b, fi)| Ok(b.a_gi.matvec(&b.solve(fi)?)))
        .collect::<Result<_>>()?;
    let mut out = fg.to_vec();
    for c in corr {
        out.iter_mut().zip(c).for_each(|(a, c)| *a -= c);
    }
    Ok(out)
}

/// `x_i = A_ii^{-1} (f_i - A_iG xg)`.
pub fn recover_interiors(sys: &SchurSystem, xg: &[f64], f: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (parts, _) = sys.split(f)?;
    if xg.len() != sys.interface_dim() {
        return Err(mismatch("interface vector length"));
    }
    sys.blocks
        .par_iter()
        .zip(parts)
        .map(|(b, fi)| {
            let c = b.a_ig.matvec(xg);
            let rhs: Vec<f64> = fi.iter().zip(c).map(|(a, c)| a - c).collect();
            b.solve(&rhs)
        })
        .collect()
}

/// Interface preconditioner built from probes of `S`.
pub fn build_preconditioner(sys: &SchurSystem, pc: Preconditioner) -> Result<Option<BandPreconditioner>> {
    let n = sys.interface_dim();
    let apply = |x: &[f64]| schur_apply(sys, x);
    Ok(match pc {
        Preconditioner::None => None,
        Preconditioner::Diagonal => Some(BandPreconditioner::diagonal(&probing_build(apply, 0, n)?)),
        Preconditioner::Probing { d, ranks } => Some(BandPreconditioner::new(&probing_build(apply, d, n)?, ranks)?),
    })
}

/// Condense, solve the interface system and recover the interiors.
pub fn schur_solve(sys: &SchurSystem, f: &[f64], opts: &SchurOptions) -> Result<SchurSolution> {
    let pc = build_preconditioner(sys, opts.precond)?;
    schur_solve_with(sys, f, opts, pc.as_ref())
}

/// [`schur_solve`] with a preconditioner built once by the caller.
pub fn schur_solve_with(sys: &SchurSystem, f: &[f64], opts: &SchurOptions, pc: Option<&BandPreconditioner>) -> Result<SchurSolution> {
    let n = sys.interface_dim();
    let g = schur_rhs(sys, f)?;
    let fallback = matches!(opts.precond, Preconditioner::Probing { .. }) && pc.is_some_and(|p| p.is_diagonal());
    let precond = |r: &[f64]| match pc {
        Some(p) => p.apply(r),
        None => Ok(r.to_vec()),
    };
    let apply = |x: &[f64]| schur_apply(sys, x);
    let maxit = opts.maxit.unwrap_or_else(|| ((10.0 * (n as f64).sqrt()).ceil() as usize).max(1));
    let unsymmetric = !sys.is_symmetric();
    let (xg, stats) = if unsymmetric {
        gmres_solve(apply, &g, precond, opts.tol, maxit, opts.restart)?
    } else {
        cg_solve(apply, &g, precond, opts.tol, maxit)?
    };
    let interiors = recover_interiors(sys, &xg, f)?;
    Ok(SchurSolution { interiors, interface: xg, stats, unsymmetric, precond_fallback: fallback })
}

/// Two horizontal strips with constant coefficients `kappa.0` (above) and
/// `kappa.1` (below) separated by one interface row of `nx` nodes. Five-point
/// operator with spacing 1, Dirichlet outside, plus `shift` on the diagonal.
/// The strips are solved by separation of variables.
pub fn two_layer_problem(nx: usize, nz: (usize, usize), kappa: (f64, f64), shift: f64) -> Result<SchurSystem> {
    if nx == 0 || nz.0 == 0 || nz.1 == 0 || !(kappa.0 > 0.0 && kappa.1 > 0.0) || !(shift >= 0.0) {
        return Err(Error::InvalidParameter("two-layer problem needs positive sizes and coefficients".into()));
    }
    let strip = |k: f64, rows: usize| {
        SeparableOperator::new(rows, vec![-k; nx], vec![2.0 * k + shift; nx], vec![-k; nx], vec![k; nx])
    };
    // upper strip touches the interface at its last z index, lower at its first
    let upper = SparseMatrix::from_triplets(nx * nz.0, nx, (0..nx).map(|j| (j * nz.0 + nz.0 - 1, j, -kappa.0)).collect())?;
    let lower = SparseMatrix::from_triplets(nx * nz.1, nx, (0..nx).map(|j| (j * nz.1, j, -kappa.1)).collect())?;
    let kx = 0.5 * (kappa.0 + kappa.1);
    let mut t = vec![];
    for j in 0..nx {
        t.push((j, j, 2.0 * kx + kappa.0 + kappa.1 + shift));
        if j > 0 {
            t.push((j, j - 1, -kx));
        }
        if j + 1 < nx {
            t.push((j, j + 1, -kx));
        }
    }
    let blocks = vec![
        SubdomainBlock::symmetric(0, SubdomainSolver::Separable(Box::new(strip(kappa.0, nz.0)?)), upper)?,
        SubdomainBlock::symmetric(1, SubdomainSolver::Separable(Box::new(strip(kappa.1, nz.1)?)), lower)?,
    ];
    SchurSystem::new(blocks, SparseMatrix::from_triplets(nx, nx, t)?)
}

#[cfg(test)]
pub(crate) mod testsys {
    use super::*;

    /// Five-point Laplacian (plus `shift`) on an `nx x ny` grid, Dirichlet
    /// outside, with coefficient `kappa(x, y)` on faces (harmonic mean).
    pub fn grid_operator(nx: usize, ny: usize, kappa: impl Fn(usize, usize) -> f64, shift: f64) -> SparseMatrix {
        let id = |x: usize, y: usize| x * ny + y;
        let face = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut t = vec![];
        for x in 0..nx {
            for y in 0..ny {
                let k = kappa(x, y);
                let mut diag = shift;
                let nbrs = [
                    (x > 0).then(|| (x - 1, y)),
                    (x + 1 < nx).then(|| (x + 1, y)),
                    (y > 0).then(|| (x, y - 1)),
                    (y + 1 < ny).then(|| (x, y + 1)),
                ];
                for nb in nbrs {
                    match nb {
                        Some((a, b)) => {
                            let c = face(k, kappa(a, b));
                            diag += c;
                            t.push((id(x, y), id(a, b), -c));
                        }
                        None => diag += 2.0 * k,
                    }
                }
                t.push((id(x, y), id(x, y), diag));
            }
        }
        SparseMatrix::from_triplets(nx * ny, nx * ny, t).unwrap()
    }

    /// Split a global sparse operator by labels into a Schur system with
    /// dense subdomain solvers.
    pub fn split_system(a: &SparseMatrix, labels: &[Option<NodeLabel>]) -> (SchurSystem, Numbering) {
        let num = partition_numbering(labels).unwrap();
        let pos = num.positions();
        let n = a.rows();
        let gamma0 = n - num.interface;
        let starts: Vec<usize> = num.interior.iter().scan(0, |s, c| Some(std::mem::replace(s, *s + c))).collect();
        let owner = |p: usize| -> Option<usize> { (p < gamma0).then(|| starts.iter().rposition(|&s| s <= p).unwrap()) };
        let mut blk_t = vec![vec![]; num.interior.len()];
        let mut ig_t = vec![vec![]; num.interior.len()];
        let mut gi_t = vec![vec![]; num.interior.len()];
        let mut gg_t = vec![];
        for (r, c, v) in a.triplets() {
            let (pr, pc) = (pos[r], pos[c]);
            match (owner(pr), owner(pc)) {
                (Some(i), Some(j)) => {
                    assert_eq!(i, j, "subdomains must not touch");
                    blk_t[i].push((pr - starts[i], pc - starts[i], v));
                }
                (Some(i), None) => ig_t[i].push((pr - starts[i], pc - gamma0, v)),
                (None, Some(j)) => gi_t[j].push((pr - gamma0, pc - starts[j], v)),
                (None, None) => gg_t.push((pr - gamma0, pc - gamma0, v)),
            }
        }
        let ng = num.interface;
        let blocks = (0..num.interior.len())
            .map(|i| {
                let ni = num.interior[i];
                let dense = SparseMatrix::from_triplets(ni, ni, std::mem::take(&mut blk_t[i])).unwrap().to_dense();
                let ig = SparseMatrix::from_triplets(ni, ng, std::mem::take(&mut ig_t[i])).unwrap();
                let gi = SparseMatrix::from_triplets(ng, ni, std::mem::take(&mut gi_t[i])).unwrap();
                let sym = gi.is_transpose_of(&ig) && dense == dense.transpose();
                SubdomainBlock::new(i, SubdomainSolver::dense(dense).unwrap(), ig, gi, sym).unwrap()
            })
            .collect();
        let gg = SparseMatrix::from_triplets(ng, ng, gg_t).unwrap();
        (SchurSystem::new(blocks, gg).unwrap(), num)
    }

    /// Grid split into horizontal strips at rows `cuts` (interface rows).
    pub fn strip_labels(nx: usize, ny: usize, cuts: &[usize]) -> Vec<Option<NodeLabel>> {
        (0..nx * ny)
            .map(|k| {
                let y = k % ny;
                if cuts.contains(&y) {
                    Some(NodeLabel::Interface)
                } else {
                    Some(NodeLabel::Interior(cuts.iter().filter(|&&c| c < y).count()))
                }
            })
            .collect()
    }
}
