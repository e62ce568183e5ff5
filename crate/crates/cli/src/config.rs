//! Run configuration: one TOML file, every section optional, unknown keys
//! rejected. Command-line flags are applied on top with [`Overrides`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub ranks: usize,
    pub tol: f64,
    pub solve: SolveConfig,
    pub probe: ProbeConfig,
    pub acoustic: AcousticConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            ranks: 1,
            tol: 1e-8,
            solve: SolveConfig::default(),
            probe: ProbeConfig::default(),
            acoustic: AcousticConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub matrix: Option<PathBuf>,
    pub rhs: Vec<PathBuf>,
    /// Run the rank programs on the thread pool.
    pub parallel: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub nx: usize,
    pub nz: [usize; 2],
    pub kappa: [f64; 2],
    pub shift: f64,
    pub d: Vec<usize>,
    pub maxit: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { nx: 128, nz: [32, 32], kappa: [1.0, 10.0], shift: 0.01, d: vec![0, 3, 5, 11, 21], maxit: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub rows: usize,
    pub velocity: f64,
    pub density: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Neumann,
    Dirichlet,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PmlConfig {
    /// Zero disables the layer.
    pub rows: usize,
    pub cp: f64,
    pub nu: u32,
    pub chi: f64,
    pub damped: bool,
}

impl Default for PmlConfig {
    fn default() -> Self {
        PmlConfig { rows: 20, cp: 2000.0, nu: 2, chi: 1e-6, damped: true }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LaguerreConfig {
    pub alpha: u32,
    pub eta: f64,
    pub nterms: usize,
}

impl Default for LaguerreConfig {
    fn default() -> Self {
        LaguerreConfig { alpha: 5, eta: 600.0, nterms: 200 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub f0: f64,
    pub t0: f64,
    pub g: f64,
    pub depth: f64,
    pub amplitude: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig { f0: 30.0, t0: 0.2, g: 4.0, depth: 0.0, amplitude: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SolverKindConfig {
    Monolithic,
    Schur,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticSolverConfig {
    pub kind: SolverKindConfig,
    pub interface_rows: Vec<usize>,
    /// Probing half-bandwidth for the interface preconditioner.
    pub d: usize,
    pub maxit: Option<usize>,
}

impl Default for AcousticSolverConfig {
    fn default() -> Self {
        AcousticSolverConfig { kind: SolverKindConfig::Monolithic, interface_rows: vec![], d: 3, maxit: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticConfig {
    pub nr: usize,
    pub hz: f64,
    pub hr: f64,
    pub layers: Vec<LayerConfig>,
    pub top: BoundaryKind,
    pub bottom: BoundaryKind,
    pub outer: BoundaryKind,
    pub pml: PmlConfig,
    pub laguerre: LaguerreConfig,
    pub source: SourceConfig,
    pub solver: AcousticSolverConfig,
    pub gauges: Vec<[f64; 2]>,
    pub t_end: f64,
    pub dt: f64,
    pub snapshot_times: Vec<f64>,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        AcousticConfig {
            nr: 40,
            hz: 5.0,
            hr: 5.0,
            layers: vec![LayerConfig { rows: 40, velocity: 2000.0, density: 1.0 }],
            top: BoundaryKind::Neumann,
            bottom: BoundaryKind::Dirichlet,
            outer: BoundaryKind::Dirichlet,
            pml: PmlConfig::default(),
            laguerre: LaguerreConfig::default(),
            source: SourceConfig { depth: 50.0, ..SourceConfig::default() },
            solver: AcousticSolverConfig::default(),
            gauges: vec![[50.0, 100.0]],
            t_end: 0.5,
            dt: 1e-3,
            snapshot_times: vec![0.3],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub p: Vec<usize>,
    /// Block rows of the generated instance.
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Also write the message trace of every run.
    pub traces: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { p: vec![2, 4, 8, 16], n: 64, m: 4, alpha: 1e-6, beta: 1e-9, traces: false }
    }
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub ranks: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub d: Option<Vec<usize>>,
    pub p: Option<Vec<usize>>,
    pub matrix: Option<PathBuf>,
    pub rhs: Option<Vec<PathBuf>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.ranks {
            self.ranks = v;
        }
        if let Some(v) = o.tol {
            self.tol = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.alpha {
            self.bench.alpha = v;
        }
        if let Some(v) = o.beta {
            self.bench.beta = v;
        }
        if let Some(v) = &o.d {
            self.probe.d = v.clone();
            self.acoustic.solver.d = v.first().copied().unwrap_or(self.acoustic.solver.d);
        }
        if let Some(v) = &o.p {
            self.bench.p = v.clone();
        }
        if let Some(v) = &o.matrix {
            self.solve.matrix = Some(v.clone());
        }
        if let Some(v) = &o.rhs {
            self.solve.rhs = v.clone();
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn common(&self) -> Result<(), CliError> {
        if self.ranks == 0 {
            return Err(CliError::Config("ranks must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(CliError::Config(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        Ok(())
    }

    pub fn validate_solve(&self) -> Result<(), CliError> {
        self.common()?;
        if self.solve.matrix.is_none() {
            return Err(CliError::Config("solve needs a matrix file".into()));
        }
        if self.solve.rhs.is_empty() {
            return Err(CliError::Config("solve needs at least one right-hand side".into()));
        }
        Ok(())
    }

    pub fn validate_probe(&self) -> Result<(), CliError> {
        self.common()?;
        let p = &self.probe;
        if p.nx == 0 || p.nz[0] == 0 || p.nz[1] == 0 {
            return Err(CliError::Config("probe grid sizes must be positive".into()));
        }
        if !(p.kappa[0] > 0.0 && p.kappa[1] > 0.0 && p.shift >= 0.0) {
            return Err(CliError::Config("probe coefficients must be positive and the shift nonnegative".into()));
        }
        if let Some(&d) = p.d.iter().find(|&&d| 2 * d + 1 > p.nx) {
            return Err(CliError::Config(format!(
                "probing band too wide: 2d+1 = {} exceeds interface size {}",
                2 * d + 1,
                p.nx
            )));
        }
        Ok(())
    }

    pub fn validate_acoustic(&self) -> Result<(), CliError> {
        self.common()?;
        let a = &self.acoustic;
        if a.layers.is_empty() {
            return Err(CliError::Config("acoustic model needs at least one layer".into()));
        }
        if !(a.dt > 0.0 && a.t_end >= 0.0) {
            return Err(CliError::Config("dt must be positive and t_end nonnegative".into()));
        }
        if a.t_end / a.dt > 1e7 {
            return Err(CliError::Config("too many trace samples".into()));
        }
        if a.solver.kind == SolverKindConfig::Schur && a.solver.interface_rows.is_empty() {
            return Err(CliError::Config("the schur solver needs interface_rows".into()));
        }
        // remaining checks need the assembled model; see `acoustic::model_config`
        Ok(())
    }

    pub fn validate_bench(&self) -> Result<(), CliError> {
        self.common()?;
        let b = &self.bench;
        if b.m == 0 || b.n == 0 {
            return Err(CliError::Config("bench instance sizes must be positive".into()));
        }
        if let Some(&p) = b.p.iter().find(|&&p| p < 2 || p > b.n) {
            return Err(CliError::Config(format!("bench rank count {p} must lie in 2..={}", b.n)));
        }
        if !(b.alpha >= 0.0 && b.beta >= 0.0 && b.alpha.is_finite() && b.beta.is_finite()) {
            return Err(CliError::Config("alpha and beta must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("sead = 3"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[probe]\nnx = 4\nwidth = 2"), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_win() {
        let mut c = RunConfig::parse("ranks = 2\n[probe]\nd = [1]").unwrap();
        c.apply(&Overrides { ranks: Some(8), d: Some(vec![0, 3]), ..Overrides::default() });
        assert_eq!(c.ranks, 8);
        assert_eq!(c.probe.d, vec![0, 3]);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        c.probe.nx = 6;
        c.probe.d = vec![3];
        assert!(c.validate_probe().is_err());
        c.probe.d = vec![2];
        assert!(c.validate_probe().is_ok());
        c.bench.p = vec![1];
        assert!(c.validate_bench().is_err());
        c.bench.p = vec![];
        assert!(c.validate_bench().is_ok());
        assert!(c.validate_solve().is_err());
    }
}
