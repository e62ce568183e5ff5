use std::path::{Path, PathBuf};
use std::time::Instant;

use blocktri::acoustic::medium::{Boundaries, Boundary, Layer, MediumModel};
use blocktri::acoustic::solver::{gauges_csv, run_model, write_snapshot, ModelConfig, SolverChoice};
use blocktri::acoustic::system::PmlLayer;
use blocktri::acoustic::{LaguerreParams, SourceSpec};
use blocktri::block::{BlockTriMatrix, BlockVector, Matrix};
use blocktri::harness::{predict_preprocess_comm, predict_solve_comm, solve_on_ranks, CostModelParams, Mode};
use blocktri::io::{read_blocktri, read_blockvec, write_atomic, write_blockvec};
use blocktri::plan_build;
use blocktri::schur::band::{probing_build, BandPreconditioner};
use blocktri::schur::{schur_apply, schur_solve_with, two_layer_problem, Preconditioner, SchurOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{BoundaryKind, RunConfig, SolverKindConfig};
use crate::{CliError, CliResult};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    Ok(cfg.out.clone())
}

/// Write `report.json` with the resolved config embedded, and the config
/// itself as `config.toml` so the run can be repeated from it.
fn write_report(out: &Path, command: &str, cfg: &RunConfig, results: Value) -> CliResult<()> {
    let report = json!({
        "command": command,
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "results": results,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out.join("report.json"), text.as_bytes())?;
    write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(())
}

pub fn cmd_solve(cfg: &RunConfig) -> CliResult<Value> {
    cfg.validate_solve()?;
    let matrix_path = cfg.solve.matrix.as_deref().expect("validated");
    let a = read_blocktri(matrix_path).map_err(|e| io_err(matrix_path, e))?;
    let rhs: Vec<BlockVector> =
        cfg.solve.rhs.iter().map(|p| read_blockvec(p).map_err(|e| io_err(p, e))).collect::<CliResult<_>>()?;
    if let Some(f) = rhs.iter().find(|f| f.n() != a.n() || f.m() != a.m()) {
        return Err(CliError::Config(format!(
            "rhs is {}x{} but the matrix has {} block rows of order {}",
            f.n(),
            f.m(),
            a.n(),
            a.m()
        )));
    }
    if cfg.ranks > a.n() {
        return Err(CliError::Config(format!("{} ranks for {} block rows", cfg.ranks, a.n())));
    }
    let out = prepare_out(cfg)?;
    let t = Instant::now();
    let plan = plan_build(&a, cfg.ranks)?;
    let build_s = t.elapsed().as_secs_f64();
    let mode = if cfg.solve.parallel { Mode::Parallel } else { Mode::Sequential };
    let t = Instant::now();
    let mut residual = 0.0f64;
    let mut stages = 0;
    let mut solutions = vec![];
    for (k, f) in rhs.iter().enumerate() {
        let (x, trace) = solve_on_ranks(&plan, f, mode)?;
        residual = residual.max(a.residual_inf(&x, f)? / f.norm_inf().max(f64::MIN_POSITIVE));
        stages = trace.stages();
        let name = if rhs.len() == 1 { "solution.bvc".to_string() } else { format!("solution_{k}.bvc") };
        write_blockvec(&out.join(&name), &x)?;
        solutions.push(name);
    }
    let solve_s = t.elapsed().as_secs_f64();
    let results = json!({
        "residual": residual,
        "plan_build_seconds": build_s,
        "solve_seconds": solve_s,
        "ranks": cfg.ranks,
        "stages": stages,
        "solutions": solutions,
    });
    write_report(&out, "solve", cfg, results.clone())?;
    Ok(results)
}

pub fn cmd_probe(cfg: &RunConfig) -> CliResult<Value> {
    cfg.validate_probe()?;
    let p = &cfg.probe;
    let sys = two_layer_problem(p.nx, (p.nz[0], p.nz[1]), (p.kappa[0], p.kappa[1]), p.shift)?;
    let out = prepare_out(cfg)?;
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f: Vec<f64> = (0..sys.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = sys.interface_dim();
    let mut csv = String::from("d,iterations,seconds\n");
    let mut rows = vec![];
    for &d in &p.d {
        let t = Instant::now();
        let band = probing_build(|x| schur_apply(&sys, x), d, n)?;
        let pc = if d == 0 { BandPreconditioner::diagonal(&band) } else { BandPreconditioner::new(&band, cfg.ranks)? };
        let precond = if d == 0 { Preconditioner::Diagonal } else { Preconditioner::Probing { d, ranks: cfg.ranks } };
        let opts = SchurOptions { tol: cfg.tol, maxit: p.maxit, precond, ..SchurOptions::default() };
        let sol = schur_solve_with(&sys, &f, &opts, Some(&pc))?;
        let secs = t.elapsed().as_secs_f64();
        if !sol.stats.converged {
            return Err(CliError::Numerical(format!(
                "interface iteration with d={d} stopped after {} steps at residual {:e}",
                sol.stats.iterations, sol.stats.relative_residual
            )));
        }
        write_atomic(&out.join(format!("band_d{d}.band")), &band.encode())?;
        csv.push_str(&format!("{d},{},{secs}\n", sol.stats.iterations));
        rows.push(json!({
            "d": d,
            "iterations": sol.stats.iterations,
            "seconds": secs,
            "relative_residual": sol.stats.relative_residual,
            "diagonal_fallback": sol.precond_fallback,
        }));
    }
    write_atomic(&out.join("probe.csv"), csv.as_bytes())?;
    let results = json!({ "interface_size": n, "sweep": rows });
    write_report(&out, "probe", cfg, results.clone())?;
    Ok(results)
}

fn boundary(b: BoundaryKind) -> Boundary {
    match b {
        BoundaryKind::Neumann => Boundary::Neumann,
        BoundaryKind::Dirichlet => Boundary::Dirichlet,
    }
}

/// Translate the acoustic section into a model description. The absorbing
/// layer continues the deepest layer's properties below the listed rows.
pub fn model_config(cfg: &RunConfig) -> CliResult<ModelConfig> {
    let a = &cfg.acoustic;
    let mut layers: Vec<Layer> =
        a.layers.iter().map(|l| Layer { rows: l.rows, velocity: l.velocity, density: l.density }).collect();
    if let Some(last) = layers.last_mut() {
        last.rows += a.pml.rows;
    }
    let medium = MediumModel::layered(a.nr, a.hz, a.hr, &layers)?.with_boundaries(Boundaries {
        top: boundary(a.top),
        bottom: boundary(a.bottom),
        outer: boundary(a.outer),
    });
    let pml = (a.pml.rows > 0)
        .then(|| PmlLayer { damped: a.pml.damped, ..PmlLayer::new(a.pml.rows, a.pml.cp, a.pml.nu, a.pml.chi) });
    let lp = LaguerreParams::new(a.laguerre.alpha, a.laguerre.eta, a.laguerre.nterms)?;
    let s = &a.source;
    let source = SourceSpec { f0: s.f0, t0: s.t0, g: s.g, depth: s.depth, amplitude: s.amplitude };
    source.validate()?;
    let solver = match a.solver.kind {
        SolverKindConfig::Monolithic => SolverChoice::Monolithic { ranks: cfg.ranks },
        SolverKindConfig::Schur => SolverChoice::Schur {
            interface_rows: a.solver.interface_rows.clone(),
            ranks: cfg.ranks,
            options: SchurOptions {
                tol: cfg.tol,
                maxit: a.solver.maxit,
                precond: Preconditioner::Probing { d: a.solver.d, ranks: cfg.ranks },
                ..SchurOptions::default()
            },
        },
    };
    let samples = (a.t_end / a.dt).floor() as usize;
    Ok(ModelConfig {
        medium,
        pml,
        lp,
        source,
        solver,
        gauges: a.gauges.iter().map(|g| (g[0], g[1])).collect(),
        trace_times: (0..=samples).map(|i| i as f64 * a.dt).collect(),
        snapshot_times: a.snapshot_times.clone(),
    })
}

pub fn cmd_acoustic(cfg: &RunConfig) -> CliResult<Value> {
    cfg.validate_acoustic()?;
    let model = model_config(cfg)?;
    let out = prepare_out(cfg)?;
    let t = Instant::now();
    let result = run_model(&model)?;
    let secs = t.elapsed().as_secs_f64();
    let mut snaps = vec![];
    for (k, s) in result.snapshots.iter().enumerate() {
        let stem = format!("snapshot_{k}");
        write_snapshot(&out, &stem, s)?;
        snaps.push(json!({ "file": format!("{stem}.bin"), "t": s.t }));
    }
    write_atomic(&out.join("gauges.csv"), gauges_csv(&model.trace_times, &result.traces, &model.gauges).as_bytes())?;
    let results = json!({
        "seconds": secs,
        "harmonics": model.lp.nterms,
        "iterations": result.iterations,
        "solver_kinds": result.solver_kinds.iter().map(|k| format!("{k:?}")).collect::<Vec<_>>(),
        "snapshots": snaps,
    });
    write_report(&out, "acoustic", cfg, results.clone())?;
    Ok(results)
}

/// Random strictly block-row diagonally dominant instance.
fn bench_instance(n: usize, m: usize, seed: u64) -> CliResult<BlockTriMatrix> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut block = || Matrix::from_fn(m, m, |_, _| r.gen_range(-1.0..1.0));
    let lower: Vec<_> = (1..n).map(|_| block()).collect();
    let upper: Vec<_> = (1..n).map(|_| block()).collect();
    let mut diag: Vec<_> = (0..n).map(|_| block()).collect();
    for c in &mut diag {
        for i in 0..m {
            c[(i, i)] = 2.0 * m as f64 + 1.0;
        }
    }
    Ok(BlockTriMatrix::new(diag, lower, upper)?)
}

pub fn cmd_bench(cfg: &RunConfig) -> CliResult<Value> {
    cfg.validate_bench()?;
    let b = &cfg.bench;
    let out = prepare_out(cfg)?;
    let a = bench_instance(b.n, b.m, cfg.seed)?;
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let flat: Vec<f64> = (0..b.n * b.m).map(|_| r.gen_range(-1.0..1.0)).collect();
    let f = BlockVector::from_flat(b.n, b.m, &flat)?;
    let mut csv = String::from("p,stages,messages,bytes,T1_model,T2_model\n");
    let mut rows = vec![];
    for &p in &b.p {
        let plan = plan_build(&a, p)?;
        let (_, trace) = solve_on_ranks(&plan, &f, Mode::Sequential)?;
        let params = CostModelParams { alpha: b.alpha, beta: b.beta, m: b.m, p };
        let (t1, t2) = (predict_preprocess_comm(&params)?, predict_solve_comm(&params)?);
        let bytes: usize = trace.events().iter().map(|e| e.bytes).sum();
        csv.push_str(&format!("{p},{},{},{bytes},{t1},{t2}\n", trace.stages(), trace.events().len()));
        if b.traces {
            write_atomic(&out.join(format!("trace_p{p}.csv")), trace.to_csv().as_bytes())?;
        }
        rows.push(json!({ "p": p, "stages": trace.stages(), "messages": trace.events().len(), "bytes": bytes }));
    }
    write_atomic(&out.join("bench.csv"), csv.as_bytes())?;
    let results = json!({ "runs": rows });
    write_report(&out, "bench", cfg, results.clone())?;
    Ok(results)
}
