use std::path::PathBuf;
use std::process::ExitCode;

use blocktri_cli::commands::{cmd_acoustic, cmd_bench, cmd_probe, cmd_solve};
use blocktri_cli::config::{Overrides, RunConfig};
use blocktri_cli::CliResult;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blocktri", version, about = "Block-tridiagonal dichotomy, Schur and acoustic solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a BTR1 matrix against BVC1 right-hand sides.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Repeatable.
        #[arg(long)]
        rhs: Vec<PathBuf>,
    },
    /// Sweep the probing bandwidth on the two-medium model problem.
    Probe {
        #[command(flatten)]
        common: Common,
    },
    /// Run the cylindrical acoustic model.
    Acoustic {
        #[command(flatten)]
        common: Common,
    },
    /// Message counts and cost-model predictions over rank counts.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated rank counts.
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated probing bandwidths.
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            ranks: self.ranks,
            tol: self.tol,
            seed: self.seed,
            out: self.out.clone(),
            alpha: self.alpha,
            beta: self.beta,
            d: self.d.clone(),
            ..Overrides::default()
        }
    }
}

fn resolve(common: &Common, extra: Overrides) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&common.overrides());
    cfg.apply(&extra);
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    match cli.command {
        Command::Solve { common, matrix, rhs } => {
            let rhs = (!rhs.is_empty()).then_some(rhs);
            cmd_solve(&resolve(&common, Overrides { matrix, rhs, ..Overrides::default() })?)
        }
        Command::Probe { common } => cmd_probe(&resolve(&common, Overrides::default())?),
        Command::Acoustic { common } => cmd_acoustic(&resolve(&common, Overrides::default())?),
        Command::Bench { common, p } => cmd_bench(&resolve(&common, Overrides { p, ..Overrides::default() })?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string(&v).expect("results serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
