use std::path::Path;
use std::process::{Command, Output};

use blocktri::block::{BlockTriMatrix, BlockVector, Matrix};
use blocktri::io::{read_blockvec, write_blocktri, write_blockvec};
use blocktri::schur::band::BandMatrix;
use tempfile::TempDir;

fn blocktri(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blocktri")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

fn dominant(n: usize, m: usize) -> BlockTriMatrix {
    let mut s = 7u64;
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let mut blk = |d: f64| {
        let mut b = Matrix::from_fn(m, m, |_, _| next());
        for i in 0..m {
            b[(i, i)] += d;
        }
        b
    };
    let diag = (0..n).map(|_| blk(3.0 * m as f64)).collect();
    let lower = (1..n).map(|_| blk(0.0)).collect();
    let upper = (1..n).map(|_| blk(0.0)).collect();
    BlockTriMatrix::new(diag, lower, upper).unwrap()
}

#[test]
fn solve_identity_returns_rhs() {
    let dir = TempDir::new().unwrap();
    let (a, f) = (dir.path().join("a.btr"), dir.path().join("f.bvc"));
    write_blocktri(&a, &BlockTriMatrix::identity(6, 2)).unwrap();
    let rhs = BlockVector::from_flat(6, 2, &(0..12).map(|i| i as f64 - 3.5).collect::<Vec<_>>()).unwrap();
    write_blockvec(&f, &rhs).unwrap();
    let out = dir.path().join("out");
    let o = blocktri(&["solve", "--matrix", p(&a), "--rhs", p(&f), "--ranks", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_blockvec(&out.join("solution.bvc")).unwrap(), rhs);
    let report = json(&out.join("report.json"));
    let res = &report["results"];
    for key in ["residual", "plan_build_seconds", "solve_seconds", "ranks", "stages"] {
        assert!(!res[key].is_null(), "missing {key}");
    }
    assert_eq!(res["ranks"], 3);
    assert_eq!(res["stages"], 2);
    assert_eq!(report["config"]["ranks"], 3);
}

#[test]
fn solve_agrees_across_rank_counts() {
    let dir = TempDir::new().unwrap();
    let (a, f) = (dir.path().join("a.btr"), dir.path().join("f.bvc"));
    write_blocktri(&a, &dominant(32, 3)).unwrap();
    write_blockvec(&f, &BlockVector::from_flat(32, 3, &(0..96).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap())
        .unwrap();
    let run = |ranks: &str| {
        let out = dir.path().join(format!("out{ranks}"));
        let o = blocktri(&["solve", "--matrix", p(&a), "--rhs", p(&f), "--ranks", ranks, "--out", p(&out)]);
        assert!(o.status.success());
        assert!(json(&out.join("report.json"))["results"]["residual"].as_f64().unwrap() < 1e-12);
        read_blockvec(&out.join("solution.bvc")).unwrap()
    };
    let (x1, x4) = (run("1"), run("4"));
    assert!(x1.max_abs_diff(&x4) <= 1e-8 * x1.norm_inf());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = blocktri(&["solve", "--matrix", "/nonexistent/a.btr", "--rhs", "/nonexistent/f.bvc", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "io");
}

#[test]
fn config_errors_exit_three_before_any_output() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    let out = dir.path().join("out");
    let o = blocktri(&["bench", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "config");
    assert!(!out.exists());
    let o = blocktri(&["solve", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

fn small_probe(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("probe.toml");
    std::fs::write(&cfg, "[probe]\nnx = 48\nnz = [12, 12]\nkappa = [1.0, 10.0]\nshift = 0.01\n").unwrap();
    cfg
}

#[test]
fn probe_sweep_is_nonincreasing() {
    let dir = TempDir::new().unwrap();
    let cfg = small_probe(dir.path());
    let out = dir.path().join("out");
    let o = blocktri(&["probe", "--config", p(&cfg), "--d", "0,3,5,11,21", "--ranks", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("probe.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("d,iterations,seconds"));
    let rows: Vec<(usize, usize)> = lines
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            (v[0].parse().unwrap(), v[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 3, 5, 11, 21]);
    assert!(rows.windows(2).all(|w| w[1].1 <= w[0].1), "{rows:?}");
    let band = BandMatrix::decode(&std::fs::read(out.join("band_d5.band")).unwrap()).unwrap();
    assert_eq!((band.n(), band.bandwidth()), (48, 5));
}

#[test]
fn probe_band_too_wide_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = small_probe(dir.path());
    let o = blocktri(&["probe", "--config", p(&cfg), "--d", "24", "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "config");
}

#[test]
fn bench_stages_and_cost_columns() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = blocktri(&["bench", "--p", "2,4,8,16", "--alpha", "1e-6", "--beta", "0", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("p,stages,messages,bytes,T1_model,T2_model"));
    for (line, want) in lines.zip([1, 2, 3, 4]) {
        let v: Vec<&str> = line.split(',').collect();
        let p: f64 = v[0].parse().unwrap();
        assert_eq!(v[1].parse::<usize>().unwrap(), want);
        let lg = p.log2();
        assert_eq!(v[5].parse::<f64>().unwrap(), 1e-6 * lg * lg);
    }
}

#[test]
fn bench_empty_p_list_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[bench]\np = []\n").unwrap();
    let out = dir.path().join("out");
    let o = blocktri(&["bench", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(out.join("bench.csv")).unwrap(), "p,stages,messages,bytes,T1_model,T2_model\n");
}

const TINY_ACOUSTIC: &str = r#"
[acoustic]
nr = 12
hz = 5.0
hr = 5.0
layers = [{ rows = 14, velocity = 1500.0, density = 1.0 }]
gauges = [[10.0, 30.0]]
t_end = 0.1
dt = 0.002
snapshot_times = [0.05, 0.08]

[acoustic.pml]
rows = 6
cp = 1500.0

[acoustic.laguerre]
alpha = 3
eta = 900.0
nterms = 40

[acoustic.source]
f0 = 40.0
t0 = 0.05
depth = 20.0
"#;

#[test]
fn acoustic_rerun_is_bit_identical_and_reproducible_from_report() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("a.toml");
    std::fs::write(&cfg, TINY_ACOUSTIC).unwrap();
    let (o1, o2, o3) = (dir.path().join("o1"), dir.path().join("o2"), dir.path().join("o3"));
    for out in [&o1, &o2] {
        let o = blocktri(&["acoustic", "--config", p(&cfg), "--ranks", "2", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    // the emitted config reproduces the run; only the output directory differs
    let o = blocktri(&["acoustic", "--config", p(&o1.join("config.toml")), "--out", p(&o3)]);
    assert!(o.status.success());
    for f in ["gauges.csv", "snapshot_0.bin", "snapshot_0.txt", "snapshot_1.bin"] {
        let a = std::fs::read(o1.join(f)).unwrap();
        assert_eq!(a, std::fs::read(o2.join(f)).unwrap(), "{f}");
        assert_eq!(a, std::fs::read(o3.join(f)).unwrap(), "{f}");
    }
    let snap = std::fs::read(o1.join("snapshot_0.bin")).unwrap();
    assert_eq!(snap.len(), 20 * 12 * 8);
    assert!(snap.chunks(8).any(|c| f64::from_le_bytes(c.try_into().unwrap()) != 0.0));
}

#[test]
fn acoustic_zero_amplitude_gives_zero_snapshots() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("a.toml");
    std::fs::write(&cfg, format!("{TINY_ACOUSTIC}amplitude = 0.0\n")).unwrap();
    let out = dir.path().join("o");
    let o = blocktri(&["acoustic", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["snapshot_0.bin", "snapshot_1.bin"] {
        assert!(std::fs::read(out.join(f)).unwrap().iter().all(|&b| b == 0));
    }
}

#[test]
fn acoustic_schur_path_matches_monolithic() {
    let dir = TempDir::new().unwrap();
    let read = |out: &Path| -> Vec<f64> {
        std::fs::read(out.join("snapshot_1.bin"))
            .unwrap()
            .chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let mono = dir.path().join("m.toml");
    std::fs::write(&mono, TINY_ACOUSTIC).unwrap();
    let schur = dir.path().join("s.toml");
    std::fs::write(&schur, format!("{TINY_ACOUSTIC}\n[acoustic.solver]\nkind = \"schur\"\ninterface_rows = [6, 13]\nd = 2\n"))
        .unwrap();
    let (om, os) = (dir.path().join("om"), dir.path().join("os"));
    assert!(blocktri(&["acoustic", "--config", p(&mono), "--out", p(&om)]).status.success());
    let o = blocktri(&["acoustic", "--config", p(&schur), "--tol", "1e-12", "--out", p(&os)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (read(&om), read(&os));
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let diff = a.iter().zip(&b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
    assert!(diff <= 1e-8 * scale, "{diff} vs {scale}");
}

#[test]
fn bundled_configs_validate() {
    use blocktri_cli::config::RunConfig;
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let probe = RunConfig::load(Some(&dir.join("two_medium.toml"))).unwrap();
    probe.validate_probe().unwrap();
    assert_eq!(probe.probe.d, vec![0, 3, 5, 11, 21]);
    let ac = RunConfig::load(Some(&dir.join("acoustic_layered.toml"))).unwrap();
    ac.validate_acoustic().unwrap();
    blocktri_cli::commands::model_config(&ac).unwrap();
}
