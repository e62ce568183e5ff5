//! Deterministic stage-synchronous message passing between virtual ranks.
//!
//! In stage `s` every unfinished rank runs one step on the messages sent to
//! it in stage `s - 1`, ordered by sender. Dichotomy preprocessing and
//! solving are provided as rank programs, plus the analytic communication
//! cost model.

use rayon::prelude::*;

use crate::block::{add_factorizations, counted, BlockTriMatrix, BlockVector};
use crate::dichotomy::{reduced_row, superposition_factors, DichotomyPlan, InterfaceRecord, LocalSolve, NodeKind};
use crate::error::{mismatch, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub tag: usize,
    pub payload: Vec<f64>,
}

impl Message {
    pub fn bytes(&self) -> usize {
        self.payload.len() * std::mem::size_of::<f64>()
    }
}

/// A send request from a step.
#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub to: usize,
    pub tag: usize,
    pub payload: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Needs more messages.
    Awaiting,
    Done,
}

pub trait RankProgram: Send {
    type Output: Send;

    fn step(&mut self, stage: usize, inbox: &[Message]) -> Result<(Vec<Outgoing>, Status)>;

    fn finish(self) -> Result<Self::Output>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Sequential,
    /// Steps of one stage run on the rayon pool.
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub stage: usize,
    pub sender: usize,
    pub receiver: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionTrace {
    ranks: usize,
    events: Vec<TraceEvent>,
}

impl ExecutionTrace {
    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Number of distinct stages in which messages were sent.
    pub fn stages(&self) -> usize {
        let mut s: Vec<usize> = self.events.iter().map(|e| e.stage).collect();
        s.dedup();
        s.len()
    }

    /// Per rank, the number of stages in which it sent or received.
    pub fn rank_stages(&self) -> Vec<usize> {
        let mut seen = vec![Vec::<usize>::new(); self.ranks];
        for e in &self.events {
            for r in [e.sender, e.receiver] {
                if seen[r].last() != Some(&e.stage) {
                    seen[r].push(e.stage);
                }
            }
        }
        seen.iter().map(Vec::len).collect()
    }

    /// Bytes sent by each rank in each stage, indexed `[stage][rank]`.
    pub fn sent_bytes(&self) -> Vec<Vec<usize>> {
        let last = self.events.iter().map(|e| e.stage + 1).max().unwrap_or(0);
        let mut out = vec![vec![0; self.ranks]; last];
        for e in &self.events {
            out[e.stage][e.sender] += e.bytes;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,sender,receiver,bytes\n");
        for e in &self.events {
            s.push_str(&format!("{},{},{},{}\n", e.stage, e.sender, e.receiver, e.bytes));
        }
        s
    }
}

/// Run one program per rank to completion.
pub fn run_ranks<P, F>(p: usize, factory: F, mode: Mode) -> Result<(ExecutionTrace, Vec<P::Output>)>
where
    P: RankProgram,
    F: Fn(usize) -> Result<P>,
{
    if p == 0 {
        return Err(Error::InvalidRankCount { ranks: p, reason: "need at least one rank" });
    }
    let mut progs: Vec<P> = (0..p).map(&factory).collect::<Result<_>>()?;
    let mut status = vec![Status::Awaiting; p];
    let mut inboxes: Vec<Vec<Message>> = vec![Vec::new(); p];
    let mut events = Vec::new();
    let limit = 4 * p + 64;
    for stage in 0.. {
        if stage > limit {
            return Err(Error::StageViolation(format!("no termination after {limit} stages")));
        }
        let work: Vec<(usize, &mut P, Vec<Message>)> = progs
            .iter_mut()
            .enumerate()
            .zip(inboxes.iter_mut())
            .filter(|((r, _), _)| status[*r] == Status::Awaiting)
            .map(|((r, prog), inbox)| (r, prog, std::mem::take(inbox)))
            .collect();
        let step = |(r, prog, inbox): (usize, &mut P, Vec<Message>)| {
            prog.step(stage, &inbox).map(|res| (r, res))
        };
        let results: Vec<(usize, (Vec<Outgoing>, Status))> = match mode {
            Mode::Sequential => work.into_iter().map(step).collect::<Result<_>>()?,
            Mode::Parallel => {
                let done: Vec<_> = work.into_par_iter().map(|w| counted(|| step(w))).collect();
                add_factorizations(done.iter().map(|d| d.1).sum());
                done.into_iter().map(|d| d.0).collect::<Result<_>>()?
            }
        };
        let mut in_flight = 0;
        for (r, (sends, st)) in results {
            status[r] = st;
            for o in sends {
                if o.to >= p || o.to == r {
                    return Err(Error::StageViolation(format!("rank {r} sent to rank {} in stage {stage}", o.to)));
                }
                let msg = Message { from: r, to: o.to, tag: o.tag, payload: o.payload };
                events.push(TraceEvent { stage, sender: r, receiver: o.to, bytes: msg.bytes() });
                inboxes[o.to].push(msg);
                in_flight += 1;
            }
        }
        for (r, inbox) in inboxes.iter_mut().enumerate() {
            if !inbox.is_empty() && status[r] == Status::Done {
                return Err(Error::StageViolation(format!("message to finished rank {r}")));
            }
            inbox.sort_by_key(|m| m.from);
        }
        let waiting: Vec<usize> = (0..p).filter(|&r| status[r] == Status::Awaiting).collect();
        if waiting.is_empty() {
            break;
        }
        if in_flight == 0 {
            return Err(Error::DeadlockDetected(waiting));
        }
    }
    let outputs = progs.into_iter().map(RankProgram::finish).collect::<Result<_>>()?;
    Ok((ExecutionTrace { ranks: p, events }, outputs))
}

/// Rank program for one dichotomy solve.
pub struct SolveRank<'a> {
    plan: &'a DichotomyPlan,
    rank: usize,
    f: Vec<Vec<f64>>,
    local: Option<LocalSolve>,
    /// Tree nodes containing this rank, one per depth.
    chain: Vec<usize>,
    own_part: Option<Vec<f64>>,
    x_own: Option<Vec<f64>>,
    x_next: Option<Vec<f64>>,
    rows: Option<Vec<Vec<f64>>>,
}

impl<'a> SolveRank<'a> {
    pub fn new(plan: &'a DichotomyPlan, rank: usize, f: &BlockVector) -> Self {
        let mut chain: Vec<usize> =
            (0..plan.tree().nodes().len()).filter(|&i| plan.tree().nodes()[i].members().contains(&rank)).collect();
        chain.sort_by_key(|&i| plan.tree().nodes()[i].depth);
        SolveRank {
            plan,
            rank,
            f: plan.rank_rhs(f, rank),
            local: None,
            chain,
            own_part: None,
            x_own: None,
            x_next: None,
            rows: None,
        }
    }

    fn store(&mut self, row: usize, x: Vec<f64>) -> Result<()> {
        if row == self.rank {
            self.x_own = Some(x);
        } else if row == self.rank + 1 {
            self.x_next = Some(x);
        } else {
            return Err(Error::StageViolation(format!("rank {} received row {row}", self.rank)));
        }
        Ok(())
    }
}

impl RankProgram for SolveRank<'_> {
    type Output = Vec<Vec<f64>>;

    fn step(&mut self, stage: usize, inbox: &[Message]) -> Result<(Vec<Outgoing>, Status)> {
        let plan = self.plan;
        let nodes = plan.tree().nodes();
        if stage == 0 {
            self.local = Some(plan.local_solve(self.rank, &self.f)?);
        }
        if stage > 0 {
            let prev = self.chain[stage - 1];
            if inbox.iter().any(|m| m.tag != prev || m.payload.len() != plan.m()) {
                return Err(Error::StageViolation(format!("rank {} got a stray message in stage {stage}", self.rank)));
            }
            if plan.contribution_targets(prev).contains(&self.rank) {
                let mut parts: Vec<(usize, &[f64])> = inbox.iter().map(|m| (m.from, m.payload.as_slice())).collect();
                let own = self.own_part.take().expect("own contribution kept");
                parts.push((self.rank, &own));
                parts.sort_by_key(|p| p.0);
                let x = plan.combine(parts.into_iter().map(|p| p.1));
                self.store(nodes[prev].split, x)?;
            } else if !inbox.is_empty() {
                return Err(Error::StageViolation(format!("rank {} is not a target in stage {stage}", self.rank)));
            }
        }
        let idx = self.chain[stage];
        let node = &nodes[idx];
        let local = self.local.as_ref().expect("local solve done");
        let x_lo = (node.first > 0 && self.rank == node.first - 1).then(|| self.x_own.as_deref()).flatten();
        let x_after = (self.rank == node.hi).then(|| self.x_next.as_deref()).flatten();
        match node.kind {
            NodeKind::Exchange => {
                let c = plan.contribution(idx, self.rank, local, x_lo, x_after);
                let sends = plan
                    .contribution_targets(idx)
                    .into_iter()
                    .filter(|&t| t != self.rank)
                    .map(|to| Outgoing { to, tag: idx, payload: c.clone() })
                    .collect();
                if plan.contribution_targets(idx).contains(&self.rank) {
                    self.own_part = Some(c);
                }
                Ok((sends, Status::Awaiting))
            }
            kind => {
                if kind == NodeKind::Local {
                    let c = plan.contribution(idx, self.rank, local, x_lo, x_after);
                    self.x_own = Some(plan.combine([c.as_slice()]));
                }
                let xk = self.x_own.as_deref().ok_or_else(|| mismatch("interface row missing at recovery"))?;
                let xn = if self.rank + 1 < plan.ranks() {
                    Some(self.x_next.as_deref().ok_or_else(|| mismatch("next interface row missing"))?)
                } else {
                    None
                };
                self.rows = Some(plan.recover(self.rank, local, xk, xn));
                Ok((vec![], Status::Done))
            }
        }
    }

    fn finish(self) -> Result<Vec<Vec<f64>>> {
        self.rows.ok_or(Error::DeadlockDetected(vec![self.rank]))
    }
}

/// Solve `plan * x = f` with one virtual rank per range.
pub fn solve_on_ranks(plan: &DichotomyPlan, f: &BlockVector, mode: Mode) -> Result<(BlockVector, ExecutionTrace)> {
    if f.n() != plan.n() || f.m() != plan.m() {
        return Err(mismatch("rhs does not match the plan"));
    }
    let (trace, outputs) = run_ranks(plan.ranks(), |r| Ok(SolveRank::new(plan, r, f)), mode)?;
    let mut parts: Vec<Vec<f64>> = outputs.into_iter().flatten().collect();
    parts.truncate(plan.n());
    Ok((BlockVector::new(parts)?, trace))
}

/// Rank program for preprocessing: each rank factors its own range, then the
/// interface records are all-gathered by recursive doubling (Bruck) so that
/// every rank can assemble the reduced matrix.
pub struct PreprocessRank<'a> {
    matrix: &'a BlockTriMatrix,
    ranks: usize,
    rank: usize,
    len: usize,
    /// Records of ranks `rank, rank+1, ...` (mod p) gathered so far.
    gathered: Vec<Vec<f64>>,
    reduced: Option<BlockTriMatrix>,
}

impl<'a> PreprocessRank<'a> {
    /// `matrix` must already be padded to a multiple of `ranks`.
    pub fn new(matrix: &'a BlockTriMatrix, ranks: usize, rank: usize) -> Result<Self> {
        if ranks == 0 || matrix.n() % ranks != 0 {
            return Err(Error::InvalidRankCount { ranks, reason: "ranks must divide the padded row count" });
        }
        Ok(PreprocessRank { matrix, ranks, rank, len: matrix.n() / ranks, gathered: vec![], reduced: None })
    }

    fn assemble(&self) -> Result<BlockTriMatrix> {
        let m = self.matrix.m();
        let p = self.ranks;
        let mut recs = vec![None; p];
        for (i, data) in self.gathered.iter().enumerate() {
            recs[(self.rank + i) % p] = Some(InterfaceRecord::from_payload(m, data)?);
        }
        let recs: Vec<InterfaceRecord> = recs.into_iter().map(|r| r.expect("all gathered")).collect();
        let (mut diag, mut lower, mut upper) = (vec![], vec![], vec![]);
        for j in 0..p {
            let (l, d, u) = reduced_row(j, p, self.len, &recs[j], j.checked_sub(1).map(|i| &recs[i]));
            lower.extend(l);
            diag.push(d);
            upper.extend(u);
        }
        BlockTriMatrix::new(diag, lower, upper)
    }
}

impl RankProgram for PreprocessRank<'_> {
    type Output = BlockTriMatrix;

    fn step(&mut self, stage: usize, inbox: &[Message]) -> Result<(Vec<Outgoing>, Status)> {
        let p = self.ranks;
        if stage == 0 {
            let range = superposition_factors(self.matrix, self.rank * self.len, self.len)?;
            self.gathered.push(InterfaceRecord::new(self.matrix, &range).to_payload());
        }
        let rec_len = InterfaceRecord::BLOCKS * self.matrix.m() * self.matrix.m();
        for msg in inbox {
            if msg.payload.len() % rec_len != 0 {
                return Err(Error::StageViolation("record payload misaligned".into()));
            }
            self.gathered.extend(msg.payload.chunks(rec_len).map(<[f64]>::to_vec));
        }
        let have = self.gathered.len();
        if have >= p {
            self.gathered.truncate(p);
            self.reduced = Some(self.assemble()?);
            return Ok((vec![], Status::Done));
        }
        let shift = 1usize << stage;
        let count = shift.min(p - shift);
        let payload = self.gathered[..count].concat();
        let to = (self.rank + p - shift) % p;
        Ok((vec![Outgoing { to, tag: stage, payload }], Status::Awaiting))
    }

    fn finish(self) -> Result<BlockTriMatrix> {
        self.reduced.ok_or(Error::DeadlockDetected(vec![self.rank]))
    }
}

/// Distributed assembly of the reduced matrix; every rank's copy is returned.
pub fn preprocess_on_ranks(plan: &DichotomyPlan, mode: Mode) -> Result<(Vec<BlockTriMatrix>, ExecutionTrace)> {
    let (trace, out) = run_ranks(plan.ranks(), |r| PreprocessRank::new(&plan.matrix, plan.ranks(), r), mode)?;
    Ok((out, trace))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModelParams {
    /// Latency per message, seconds.
    pub alpha: f64,
    /// Transfer time per byte, seconds.
    pub beta: f64,
    pub m: usize,
    pub p: usize,
}

impl CostModelParams {
    fn check(&self) -> Result<f64> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha {} beta {}", self.alpha, self.beta)));
        }
        if self.p < 2 {
            return Err(Error::InvalidRankCount { ranks: self.p, reason: "the cost model needs p >= 2" });
        }
        Ok((self.p as f64).log2())
    }
}

/// `alpha log2 p + p/(p-1) beta M^2`.
pub fn predict_preprocess_comm(params: &CostModelParams) -> Result<f64> {
    let lg = params.check()?;
    let (p, m) = (params.p as f64, params.m as f64);
    Ok(params.alpha * lg + p / (p - 1.0) * params.beta * m * m)
}

/// `alpha log2^2 p + 4 M^2 log2 p beta`.
pub fn predict_solve_comm(params: &CostModelParams) -> Result<f64> {
    let lg = params.check()?;
    let m = params.m as f64;
    Ok(params.alpha * lg * lg + 4.0 * m * m * lg * params.beta)
}

/// Payload bound per rank and stage, in units of `M^2` doubles. A rank sends
/// its `M`-vector partial sum to the two ranks that hold the split row.
pub const AUDIT_PAYLOAD_FACTOR: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub stages: usize,
    pub max_bytes_per_stage: usize,
    /// Trace cost: alpha per stage plus beta times the largest send per stage.
    pub trace_seconds: f64,
    pub predicted_seconds: f64,
    pub residual: f64,
}

pub fn audit_trace(trace: &ExecutionTrace, params: &CostModelParams) -> Result<AuditReport> {
    if trace.ranks() != params.p {
        return Err(mismatch("trace and parameters disagree on the rank count"));
    }
    let expect = (params.p as f64).log2().ceil() as usize;
    let stages = trace.stages();
    if stages != expect {
        return Err(Error::StageViolation(format!("{stages} stages, expected {expect}")));
    }
    let sent = trace.sent_bytes();
    let cap = AUDIT_PAYLOAD_FACTOR * params.m * params.m * std::mem::size_of::<f64>();
    let per_stage: Vec<usize> = sent.iter().map(|s| s.iter().copied().max().unwrap_or(0)).collect();
    let max_bytes = per_stage.iter().copied().max().unwrap_or(0);
    if max_bytes > cap {
        return Err(Error::StageViolation(format!("{max_bytes} bytes in one stage, bound {cap}")));
    }
    let trace_seconds = params.alpha * stages as f64 + params.beta * per_stage.iter().sum::<usize>() as f64;
    let predicted = if params.p >= 2 { predict_solve_comm(params)? } else { 0.0 };
    Ok(AuditReport {
        stages,
        max_bytes_per_stage: max_bytes,
        trace_seconds,
        predicted_seconds: predicted,
        residual: trace_seconds - predicted,
    })
}
