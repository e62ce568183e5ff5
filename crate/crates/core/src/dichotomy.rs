//! Parallel dichotomy solver for block-tridiagonal systems.
//!
//! The block rows are cut into `p` contiguous ranges of length `L`. Each
//! range starts with an interface row `K_j = jL` (0-based). Interior rows are
//! written as `X_i = U_i X_K + V_i X_{K+L} + W_i`, which reduces the system to
//! a `p`-row block-tridiagonal system on the interface rows. That reduced
//! system is solved by recursive dichotomy: a node of the partition tree
//! computes one interface component from stored inverse rows, which splits its
//! rows into two independent halves.
//!
//! Everything that depends only on the matrix lives in [`DichotomyPlan`] and is
//! computed once; [`DichotomyPlan::solve`] performs no block factorizations.

use rayon::prelude::*;

use crate::block::{add_factorizations, counted, thomas_factor, BlockTriMatrix, BlockVector, Matrix, ThomasFactorization};
use crate::error::{mismatch, Error, Result};

/// Rows of `P^{-1}` with 0-based block index `k`, as an `M x NM` matrix.
///
/// Computed from `M` solves with the transposed matrix.
pub fn inverse_block_rows(p: &BlockTriMatrix, k: usize) -> Result<Matrix> {
    let (n, m) = (p.n(), p.m());
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k + 1, len: n });
    }
    let blocks = inverse_row_blocks(&thomas_factor(&p.transpose())?, k)?;
    let mut out = Matrix::zeros(m, n * m);
    for (j, b) in blocks.iter().enumerate() {
        for r in 0..m {
            for c in 0..m {
                out[(r, j * m + c)] = b[(r, c)];
            }
        }
    }
    Ok(out)
}

/// Blocks `R_{k,j}` of block row `k` of the inverse, given the factorization
/// of the transposed matrix.
fn inverse_row_blocks(transposed: &ThomasFactorization, k: usize) -> Result<Vec<Matrix>> {
    let (n, m) = (transposed.n(), transposed.m());
    let rhs: Vec<Matrix> =
        (0..n).map(|j| if j == k { Matrix::identity(m) } else { Matrix::zeros(m, m) }).collect();
    Ok(transposed.solve_columns(&rhs)?.iter().map(Matrix::transpose).collect())
}

/// One independent subproblem produced by [`dichotomy_split`]: the block rows
/// it covers (0-based, half open) with its matrix and modified right-hand side.
#[derive(Clone, Debug)]
pub struct Subproblem {
    pub rows: std::ops::Range<usize>,
    pub matrix: BlockTriMatrix,
    pub rhs: BlockVector,
}

/// Split `P X = F` at block row `k` given the exact component `x_k`.
pub fn dichotomy_split(
    p: &BlockTriMatrix,
    f: &BlockVector,
    k: usize,
    xk: &[f64],
) -> Result<(Option<Subproblem>, Option<Subproblem>)> {
    let n = p.n();
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k + 1, len: n });
    }
    if f.n() != n || f.m() != p.m() || xk.len() != p.m() {
        return Err(mismatch("split inputs do not match the matrix"));
    }
    let left = (k > 0).then(|| {
        let mut parts = f.parts()[..k].to_vec();
        p.upper(k - 1).matvec_add(xk, &mut parts[k - 1]);
        Subproblem {
            rows: 0..k,
            matrix: p.slice(0, k),
            rhs: BlockVector::new(parts).expect("nonempty"),
        }
    });
    let right = (k + 1 < n).then(|| {
        let mut parts = f.parts()[k + 1..].to_vec();
        p.lower(k + 1).matvec_add(xk, &mut parts[0]);
        Subproblem {
            rows: k + 1..n,
            matrix: p.slice(k + 1, n),
            rhs: BlockVector::new(parts).expect("nonempty"),
        }
    });
    Ok((left, right))
}

/// What a tree node does during the reduced solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Two or more ranks exchange partial sums to compute the split component.
    Exchange,
    /// Rank 0 computes row 0 on its own.
    Local,
    /// A single rank whose row was already computed by an ancestor.
    Known,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    /// Rank group `lo..=hi`.
    pub lo: usize,
    pub hi: usize,
    /// Row computed at this node: `lo + ceil((hi - lo) / 2)` for exchanges.
    pub split: usize,
    /// Unknown reduced rows `first..=hi` this node solves for.
    pub first: usize,
    pub depth: usize,
    pub kind: NodeKind,
    pub children: Option<(usize, usize)>,
}

impl TreeNode {
    pub fn members(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn rows(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.hi
    }

    fn solves(&self) -> bool {
        self.kind != NodeKind::Known
    }
}

/// Bisection of the `p` ranks. The root group is every rank; an exchange at a
/// group computes the row `K` that separates its left ranks `lo..K` from its
/// right ranks `K..=hi`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionTree {
    nodes: Vec<TreeNode>,
    leaves: usize,
    depth: usize,
}

pub fn build_partition_tree(leaves: usize) -> PartitionTree {
    assert!(leaves >= 1, "partition tree needs at least one leaf");
    let mut nodes = Vec::new();
    let mut stack = vec![(0usize, leaves - 1, 0usize, None::<(usize, bool)>)];
    while let Some((lo, hi, depth, parent)) = stack.pop() {
        let idx = nodes.len();
        if let Some((pi, is_left)) = parent {
            let entry: &mut TreeNode = &mut nodes[pi];
            let ch = entry.children.get_or_insert((usize::MAX, usize::MAX));
            if is_left {
                ch.0 = idx;
            } else {
                ch.1 = idx;
            }
        }
        let first = if lo == 0 { 0 } else { lo + 1 };
        let (kind, split) = if hi > lo {
            (NodeKind::Exchange, lo + (hi - lo).div_ceil(2))
        } else if lo == 0 {
            (NodeKind::Local, 0)
        } else {
            (NodeKind::Known, lo)
        };
        nodes.push(TreeNode { lo, hi, split, first, depth, kind, children: None });
        if kind == NodeKind::Exchange {
            stack.push((split, hi, depth + 1, Some((idx, false))));
            stack.push((lo, split - 1, depth + 1, Some((idx, true))));
        }
    }
    let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    PartitionTree { nodes, leaves, depth }
}

impl PartitionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Indices of nodes that compute a row, in an order where every node
    /// comes after the nodes whose results it needs.
    pub fn solve_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].solves()).collect();
        order.sort_by_key(|&i| (self.nodes[i].depth, self.nodes[i].lo));
        order
    }

    /// Exchange nodes at a given depth.
    pub fn exchanges_at(&self, depth: usize) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(move |n| n.depth == depth && n.kind == NodeKind::Exchange)
    }

    /// Number of stages with an exchange: depths that hold exchange nodes.
    pub fn exchange_stages(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Exchange)
            .map(|n| n.depth + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Superposition factors of one range `[K, K+L]`.
///
/// `u[t]`, `v[t]` belong to interior row `K + 1 + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpositionFactors {
    pub u: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl SuperpositionFactors {
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Factorization of the interior rows of one range plus its superposition
/// factors.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeFactors {
    /// Interface row `K` (0-based).
    pub start: usize,
    /// Range length `L`; interior rows are `start+1 .. start+L`.
    pub len: usize,
    pub local: Option<ThomasFactorization>,
    pub factors: SuperpositionFactors,
}

fn interior_matrix(p: &BlockTriMatrix, start: usize, len: usize) -> Option<BlockTriMatrix> {
    (len > 1).then(|| p.slice(start + 1, start + len))
}

/// Solve the unit-boundary subproblems of range `start..=start+len`.
///
/// Column `c` of `U` satisfies the homogeneous recurrence with `U_K = e_c`,
/// `U_{K+L} = 0`; `V` likewise with `V_K = 0`, `V_{K+L} = e_c`. Rows beyond
/// the matrix end act as zero (the closure `X_{N+1} = 0`).
pub fn superposition_factors(p: &BlockTriMatrix, start: usize, len: usize) -> Result<RangeFactors> {
    if len == 0 || start + 1 > p.n() {
        return Err(Error::InconsistentRanges(format!("range start {start} len {len}")));
    }
    let m = p.m();
    let end = (start + len).min(p.n());
    let Some(sub) = interior_matrix(p, start, end - start) else {
        return Ok(RangeFactors {
            start,
            len,
            local: None,
            factors: SuperpositionFactors { u: vec![], v: vec![] },
        });
    };
    let local = thomas_factor(&sub).map_err(|e| match e {
        Error::SingularPivot(r) => Error::SingularPivot(start + 1 + r),
        other => other,
    })?;
    let rows = sub.n();
    let mut rhs_u = vec![Matrix::zeros(m, m); rows];
    rhs_u[0] = p.lower(start + 1).clone();
    let u = local.solve_columns(&rhs_u)?;
    let last = start + rows;
    let v = if last + 1 < p.n() {
        let mut rhs_v = vec![Matrix::zeros(m, m); rows];
        rhs_v[rows - 1] = p.upper(last).clone();
        local.solve_columns(&rhs_v)?
    } else {
        vec![Matrix::zeros(m, m); rows]
    };
    Ok(RangeFactors { start, len, local: Some(local), factors: SuperpositionFactors { u, v } })
}

/// `W_i` for the interior of a range: the recurrence driven by `f_interior`
/// with zero boundary values.
pub fn particular_solution(range: &RangeFactors, f_interior: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match &range.local {
        None if f_interior.is_empty() => Ok(vec![]),
        None => Err(mismatch("range has no interior rows")),
        Some(local) => {
            let f = BlockVector::new(f_interior.to_vec())?;
            Ok(local.solve(&f)?.into_parts())
        }
    }
}

/// Assemble the reduced interface matrix from per-range factors.
///
/// Row `j` (interface `K`): lower `A_K U_{K-1}`, diagonal
/// `C_K - A_K V_{K-1} - B_K U_{K+1}`, upper `B_K V_{K+1}`, with `U_0 = V_0 = 0`.
pub fn assemble_reduced(ranges: &[RangeFactors], p: &BlockTriMatrix) -> Result<BlockTriMatrix> {
    let count = ranges.len();
    if count == 0 {
        return Err(Error::InconsistentRanges("no ranges".into()));
    }
    let len = ranges[0].len;
    for (j, r) in ranges.iter().enumerate() {
        if r.len != len || r.start != j * len {
            return Err(Error::InconsistentRanges(format!(
                "range {j} starts at {} with length {}, expected {} and {len}",
                r.start,
                r.len,
                j * len
            )));
        }
    }
    if count * len != p.n() {
        return Err(Error::InconsistentRanges(format!("{count} ranges of {len} cover {} rows", p.n())));
    }
    let records: Vec<InterfaceRecord> = ranges.iter().map(|r| InterfaceRecord::new(p, r)).collect();
    let mut diag = Vec::with_capacity(count);
    let mut lower = Vec::with_capacity(count.saturating_sub(1));
    let mut upper = Vec::with_capacity(count.saturating_sub(1));
    for j in 0..count {
        let (l, d, u) = reduced_row(j, count, len, &records[j], j.checked_sub(1).map(|i| &records[i]));
        lower.extend(l);
        diag.push(d);
        upper.extend(u);
    }
    BlockTriMatrix::new(diag, lower, upper)
}

/// What one range contributes to the reduced matrix: the blocks of its
/// interface row and its boundary superposition factors. Absent items are
/// zero blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceRecord {
    pub a: Matrix,
    pub c: Matrix,
    pub b: Matrix,
    /// `U, V` at the first interior row.
    pub u_first: Matrix,
    pub v_first: Matrix,
    /// `U, V` at the last interior row.
    pub u_last: Matrix,
    pub v_last: Matrix,
}

impl InterfaceRecord {
    pub const BLOCKS: usize = 7;

    pub fn new(p: &BlockTriMatrix, range: &RangeFactors) -> Self {
        let (k, m) = (range.start, p.m());
        let z = || Matrix::zeros(m, m);
        let f = &range.factors;
        InterfaceRecord {
            a: if k > 0 { p.lower(k).clone() } else { z() },
            c: p.diag(k).clone(),
            b: if k + 1 < p.n() { p.upper(k).clone() } else { z() },
            u_first: f.u.first().cloned().unwrap_or_else(z),
            v_first: f.v.first().cloned().unwrap_or_else(z),
            u_last: f.u.last().cloned().unwrap_or_else(z),
            v_last: f.v.last().cloned().unwrap_or_else(z),
        }
    }

    pub fn to_payload(&self) -> Vec<f64> {
        [&self.a, &self.c, &self.b, &self.u_first, &self.v_first, &self.u_last, &self.v_last]
            .iter()
            .flat_map(|b| b.data().iter().copied())
            .collect()
    }

    pub fn from_payload(m: usize, data: &[f64]) -> Result<Self> {
        if data.len() != Self::BLOCKS * m * m {
            return Err(mismatch("interface record has wrong length"));
        }
        let blk = |i: usize| Matrix::new(m, m, data[i * m * m..(i + 1) * m * m].to_vec());
        Ok(InterfaceRecord {
            a: blk(0)?,
            c: blk(1)?,
            b: blk(2)?,
            u_first: blk(3)?,
            v_first: blk(4)?,
            u_last: blk(5)?,
            v_last: blk(6)?,
        })
    }
}

/// Reduced row `j` of `count` with range length `len`: lower, diagonal and
/// upper block (lower absent on the first row, upper on the last).
///
/// Lower `A_K U_{K-1}`, diagonal `C_K - A_K V_{K-1} - B_K U_{K+1}`, upper
/// `B_K V_{K+1}`, with `U_0 = V_0 = 0`.
pub fn reduced_row(
    j: usize,
    count: usize,
    len: usize,
    rec: &InterfaceRecord,
    prev: Option<&InterfaceRecord>,
) -> (Option<Matrix>, Matrix, Option<Matrix>) {
    let m = rec.c.rows();
    let id = Matrix::identity(m);
    let zero = Matrix::zeros(m, m);
    let mut d = rec.c.clone();
    let mut lower = None;
    if j > 0 {
        // X_{K-1} = U_{K-1} X_{K-L} + V_{K-1} X_K + W_{K-1}
        let (u_prev, v_prev) = match prev {
            Some(pr) if len > 1 => (&pr.u_last, &pr.v_last),
            _ => (&id, &zero),
        };
        d = d.sub(&rec.a.matmul(v_prev));
        lower = Some(rec.a.matmul(u_prev));
    }
    let mut upper = None;
    // row K has an upper coupling unless it is the final padded row
    if j + 1 < count || len > 1 {
        // X_{K+1} = U_{K+1} X_K + V_{K+1} X_{K+L} + W_{K+1}
        let (u_next, v_next) = if len > 1 { (&rec.u_first, &rec.v_first) } else { (&zero, &id) };
        d = d.sub(&rec.b.matmul(u_next));
        if j + 1 < count {
            upper = Some(rec.b.matmul(v_next));
        }
    }
    (lower, d, upper)
}

/// Reduced right-hand side `F_K + A_K W_{K-1} + B_K W_{K+1}` per interface.
pub fn reduced_rhs(ranges: &[RangeFactors], p: &BlockTriMatrix, f: &BlockVector, w: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    (0..ranges.len())
        .map(|j| {
            let (mut own, _) = interface_pieces(p, &ranges[j], f.part(ranges[j].start), &w[j]);
            if j > 0 {
                let (_, aw) = interface_pieces(p, &ranges[j - 1], f.part(ranges[j - 1].start), &w[j - 1]);
                if let Some(aw) = aw {
                    own.iter_mut().zip(aw).for_each(|(o, a)| *o += a);
                }
            }
            own
        })
        .collect()
}

/// The two rank-local pieces of the reduced right-hand side: the own
/// interface row `F_K + B_K W_{K+1}`, and `A_{K+L} W_{K+L-1}` destined for
/// the next interface.
fn interface_pieces(
    p: &BlockTriMatrix,
    range: &RangeFactors,
    f_k: &[f64],
    w: &[Vec<f64>],
) -> (Vec<f64>, Option<Vec<f64>>) {
    let k = range.start;
    let mut own = f_k.to_vec();
    if let Some(w_first) = w.first() {
        if k + 1 < p.n() {
            p.upper(k).matvec_add(w_first, &mut own);
        }
    }
    let next = k + range.len;
    let aw = match w.last() {
        Some(w_last) if next < p.n() => Some(p.lower(next).matvec(w_last)),
        _ => None,
    };
    (own, aw)
}

/// Preprocessing product: superposition factors per range, the reduced
/// matrix, the partition tree and inverse rows for every solving node.
#[derive(Clone, Debug, PartialEq)]
pub struct DichotomyPlan {
    pub(crate) n: usize,
    pub(crate) m: usize,
    pub(crate) ranks: usize,
    /// Padded size; `padded % ranks == 0`.
    pub(crate) padded: usize,
    pub(crate) fingerprint: u64,
    /// Padded source matrix; couplings are needed for the reduced right-hand side.
    pub(crate) matrix: BlockTriMatrix,
    pub(crate) ranges: Vec<RangeFactors>,
    pub(crate) reduced: BlockTriMatrix,
    pub(crate) tree: PartitionTree,
    /// Per tree node: blocks `R_{K,r}` for `r` in the node's rows, empty for
    /// `Known` nodes.
    pub(crate) inverse_rows: Vec<Vec<Matrix>>,
}

/// Pad `p` with identity rows (zero couplings) to `padded` block rows.
fn pad_matrix(p: &BlockTriMatrix, padded: usize) -> BlockTriMatrix {
    if padded == p.n() {
        return p.clone();
    }
    let m = p.m();
    let mut diag = p.diags().to_vec();
    let mut lower = p.lowers().to_vec();
    let mut upper = p.uppers().to_vec();
    for _ in p.n()..padded {
        diag.push(Matrix::identity(m));
        lower.push(Matrix::zeros(m, m));
        upper.push(Matrix::zeros(m, m));
    }
    BlockTriMatrix::new(diag, lower, upper).expect("padding keeps the structure")
}

/// Build the reusable plan for `ranks` ranges.
pub fn plan_build(p: &BlockTriMatrix, ranks: usize) -> Result<DichotomyPlan> {
    let n = p.n();
    if ranks == 0 {
        return Err(Error::InvalidRankCount { ranks, reason: "need at least one rank" });
    }
    if ranks > n {
        return Err(Error::InvalidRankCount { ranks, reason: "more ranks than block rows" });
    }
    let len = n.div_ceil(ranks);
    let padded = len * ranks;
    let matrix = pad_matrix(p, padded);
    let ranges: Vec<(Result<RangeFactors>, u64)> =
        (0..ranks).into_par_iter().map(|j| counted(|| superposition_factors(&matrix, j * len, len))).collect();
    add_factorizations(ranges.iter().map(|r| r.1).sum());
    let ranges: Vec<RangeFactors> = ranges.into_iter().map(|r| r.0).collect::<Result<_>>()?;
    let reduced = assemble_reduced(&ranges, &matrix)?;
    let tree = build_partition_tree(ranks);
    let inverse_rows: Vec<(Result<Vec<Matrix>>, u64)> = tree
        .nodes()
        .par_iter()
        .map(|node| {
            counted(|| {
                if !node.solves() {
                    return Ok(vec![]);
                }
                let sub = reduced.slice(node.first, node.hi + 1);
                let fact = thomas_factor(&sub.transpose()).map_err(|e| match e {
                    Error::SingularPivot(r) => Error::SingularPivot(node.first + r),
                    other => other,
                })?;
                inverse_row_blocks(&fact, node.split - node.first)
            })
        })
        .collect();
    add_factorizations(inverse_rows.iter().map(|r| r.1).sum());
    let inverse_rows = inverse_rows.into_iter().map(|r| r.0).collect::<Result<_>>()?;
    Ok(DichotomyPlan {
        n,
        m: p.m(),
        ranks,
        padded,
        fingerprint: p.fingerprint(),
        matrix,
        ranges,
        reduced,
        tree,
        inverse_rows,
    })
}

/// Per-rank state after step 2.1: the particular solution of the range and
/// the two pieces of the reduced right-hand side this rank owns.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSolve {
    pub w: Vec<Vec<f64>>,
    pub own: Vec<f64>,
    pub next: Option<Vec<f64>>,
}

impl DichotomyPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn range_len(&self) -> usize {
        self.padded / self.ranks
    }

    pub fn padded(&self) -> usize {
        self.padded
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matches(&self, p: &BlockTriMatrix) -> bool {
        p.n() == self.n && p.m() == self.m && p.fingerprint() == self.fingerprint
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn reduced(&self) -> &BlockTriMatrix {
        &self.reduced
    }

    pub fn ranges(&self) -> &[RangeFactors] {
        &self.ranges
    }

    /// Stored inverse-row blocks of a tree node.
    pub fn inverse_rows(&self, node: usize) -> &[Matrix] {
        &self.inverse_rows[node]
    }

    /// Block rows of the padded right-hand side owned by `rank`.
    pub fn rank_rows(&self, rank: usize) -> std::ops::Range<usize> {
        let len = self.range_len();
        rank * len..(rank + 1) * len
    }

    /// Slice and pad the part of `f` owned by `rank`.
    pub fn rank_rhs(&self, f: &BlockVector, rank: usize) -> Vec<Vec<f64>> {
        self.rank_rows(rank)
            .map(|i| if i < self.n { f.part(i).to_vec() } else { vec![0.0; self.m] })
            .collect()
    }

    /// Step 2.1 for one rank.
    pub fn local_solve(&self, rank: usize, f_range: &[Vec<f64>]) -> Result<LocalSolve> {
        let range = &self.ranges[rank];
        let w = particular_solution(range, &f_range[1..])?;
        let (own, next) = interface_pieces(&self.matrix, range, &f_range[0], &w);
        Ok(LocalSolve { w, own, next })
    }

    /// Partial sum of rank `rank` for the component computed at `node`.
    ///
    /// `x_lo` is the known component of row `first - 1` (held by rank `lo`),
    /// `x_after` that of row `hi + 1` (held by rank `hi`).
    pub fn contribution(
        &self,
        node: usize,
        rank: usize,
        local: &LocalSolve,
        x_lo: Option<&[f64]>,
        x_after: Option<&[f64]>,
    ) -> Vec<f64> {
        let nd = &self.tree.nodes()[node];
        let rows = &self.inverse_rows[node];
        let m = self.m;
        let mut acc = vec![0.0; m];
        if nd.rows().contains(&rank) {
            rows[rank - nd.first].matvec_add(&local.own, &mut acc);
        }
        if let Some(next) = &local.next {
            if nd.rows().contains(&(rank + 1)) {
                rows[rank + 1 - nd.first].matvec_add(next, &mut acc);
            }
        }
        if nd.first > 0 && rank == nd.first - 1 {
            let x = x_lo.expect("rank lo holds the left boundary component");
            let t = self.reduced.lower(nd.first).matvec(x);
            rows[0].matvec_add(&t, &mut acc);
        }
        if nd.hi + 1 < self.ranks && rank == nd.hi {
            let x = x_after.expect("rank hi holds the right boundary component");
            let t = self.reduced.upper(nd.hi).matvec(x);
            rows[nd.hi - nd.first].matvec_add(&t, &mut acc);
        }
        acc
    }

    /// Ranks needing the contribution of a rank at `node`, besides itself.
    pub fn contribution_targets(&self, node: usize) -> Vec<usize> {
        let k = self.tree.nodes()[node].split;
        if k == 0 {
            vec![0]
        } else {
            vec![k - 1, k]
        }
    }

    /// Sum contributions in ascending rank order.
    pub fn combine<'a>(&self, parts: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
        let mut acc = vec![0.0; self.m];
        for p in parts {
            acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        acc
    }

    /// Step 2.3: interface row and interior rows of `rank`'s range.
    pub fn recover(&self, rank: usize, local: &LocalSolve, x_k: &[f64], x_next: Option<&[f64]>) -> Vec<Vec<f64>> {
        let f = &self.ranges[rank].factors;
        let mut out = Vec::with_capacity(self.range_len());
        out.push(x_k.to_vec());
        for (t, w) in local.w.iter().enumerate() {
            let mut x = w.clone();
            f.u[t].matvec_add(x_k, &mut x);
            if let Some(xn) = x_next {
                f.v[t].matvec_add(xn, &mut x);
            }
            out.push(x);
        }
        out
    }

    fn check_rhs(&self, f: &BlockVector) -> Result<()> {
        if f.n() != self.n || f.m() != self.m {
            return Err(mismatch(format!(
                "rhs {}x{} against plan {}x{}",
                f.n(),
                f.m(),
                self.n,
                self.m
            )));
        }
        Ok(())
    }

    /// Solve one right-hand side, emulating the rank programs in sequence.
    pub fn solve(&self, f: &BlockVector) -> Result<BlockVector> {
        self.check_rhs(f)?;
        let p = self.ranks;
        let locals: Vec<LocalSolve> =
            (0..p).map(|r| self.local_solve(r, &self.rank_rhs(f, r))).collect::<Result<_>>()?;
        let mut x: Vec<Option<Vec<f64>>> = vec![None; p];
        for idx in self.tree.solve_order() {
            let nd = &self.tree.nodes()[idx];
            let parts: Vec<Vec<f64>> = nd
                .members()
                .map(|r| {
                    let x_lo = (nd.first > 0).then(|| x[nd.first - 1].as_deref().expect("ancestor row"));
                    let x_after = (nd.hi + 1 < p).then(|| x[nd.hi + 1].as_deref().expect("ancestor row"));
                    self.contribution(idx, r, &locals[r], x_lo, x_after)
                })
                .collect();
            x[nd.split] = Some(self.combine(parts.iter().map(Vec::as_slice)));
        }
        let mut parts = Vec::with_capacity(self.padded);
        for r in 0..p {
            let xk = x[r].as_deref().expect("every row solved");
            let xn = (r + 1 < p).then(|| x[r + 1].as_deref().expect("every row solved"));
            parts.extend(self.recover(r, &locals[r], xk, xn));
        }
        parts.truncate(self.n);
        BlockVector::new(parts)
    }

    /// Solve a batch of right-hand sides with the same plan.
    pub fn solve_batch(&self, batch: &[BlockVector]) -> Result<Vec<BlockVector>> {
        batch.iter().map(|f| self.solve(f)).collect()
    }
}

pub fn plan_solve(plan: &DichotomyPlan, batch: &[BlockVector]) -> Result<Vec<BlockVector>> {
    plan.solve_batch(batch)
}
