use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_dag::solver::{log_grid, Acyclicity};
use latent_dag_cli::commands::{cmd_eval, cmd_fit, cmd_simulate, cmd_sweep, FitFlags};
use latent_dag_cli::config::TauRange;
use latent_dag_cli::{CliError, CliResult, RunConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "latent-dag",
    version,
    about = "Causal DAG discovery from interventional count data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log filter, e.g. `info` or `latent_dag=debug`; overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything not set.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Comma-separated λ values, or `lo:hi:points` for a log-spaced grid.
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Threshold sweep as `start:stop:step`.
    #[arg(long)]
    tau_grid: Option<String>,
    #[arg(long, value_enum)]
    acyclicity: Option<Form>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    TraceExp,
    LogDet,
    LogDetSigned,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a study and write it with its ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the graph from a dataset directory.
    Fit {
        /// Dataset directory (or its manifest.json).
        #[arg(long, short)]
        data: PathBuf,
        /// Use the exact latent means of the stored ground truth.
        #[arg(long)]
        noiseless: bool,
        /// Drop untargeted and all-zero genes instead of failing.
        #[arg(long)]
        restrict_genes: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score a fit against a reference graph.
    Eval {
        /// Fit output directory.
        #[arg(long)]
        fit: PathBuf,
        /// Dataset directory with stored truth, matrix CSV, or edge list.
        #[arg(long)]
        reference: PathBuf,
        /// Dataset directory; enables the upstream/downstream KS report.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate, fit and score every cell of the sweep grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_lambda_grid(text: &str) -> CliResult<Vec<f64>> {
    let bad = |s: &str| CliError::Usage(format!("invalid lambda grid '{text}' near '{s}'"));
    let parts: Vec<&str> = text.split(':').collect();
    if let [lo, hi, n] = parts.as_slice() {
        let lo: f64 = lo.trim().parse().map_err(|_| bad(lo))?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad(hi))?;
        let n: usize = n.trim().parse().map_err(|_| bad(n))?;
        if !(lo > 0.0 && hi >= lo) || n == 0 {
            return Err(bad(text));
        }
        return Ok(log_grid(lo, hi, n));
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad(s)))
        .collect()
}

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = &common.lambda_grid {
        cfg.fit.solver.lambda_grid = parse_lambda_grid(grid)?;
    }
    if let Some(tau) = &common.tau_grid {
        cfg.eval.tau = TauRange::parse(tau)?;
        cfg.eval.tau_grid.clear();
    }
    if let Some(form) = common.acyclicity {
        let u = match cfg.fit.solver.acyclicity {
            Acyclicity::LogDet { u } | Acyclicity::LogDetSigned { u } => u,
            Acyclicity::TraceExp => 1.0,
        };
        cfg.fit.solver.acyclicity = match form {
            Form::TraceExp => Acyclicity::TraceExp,
            Form::LogDet => Acyclicity::LogDet { u },
            Form::LogDetSigned => Acyclicity::LogDetSigned { u },
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = resolve(&common)?;
            let s = cmd_simulate(&cfg, &common.out)?;
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
        }
        Command::Fit {
            data,
            noiseless,
            restrict_genes,
            common,
        } => {
            let cfg = resolve(&common)?;
            let flags = FitFlags {
                noiseless,
                restrict_genes,
            };
            let r = cmd_fit(&data, &common.out, &cfg, flags)?;
            println!(
                "{}",
                serde_json::json!({ "lambda": r.lambda, "edges": r.edges, "feasibility_gap": r.feasibility_gap, "out": common.out })
            );
        }
        Command::Eval {
            fit,
            reference,
            data,
            common,
        } => {
            let cfg = resolve(&common)?;
            let r = cmd_eval(&fit, &reference, data.as_deref(), &common.out, &cfg)?;
            println!(
                "{}",
                serde_json::json!({ "metrics": r.metrics, "ks": r.ks })
            );
        }
        Command::Sweep { common } => {
            let cfg = resolve(&common)?;
            let s = cmd_sweep(&cfg, &common.out)?;
            for c in &s.cells {
                println!("{}", serde_json::to_string(c).expect("summary serializes"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = match &cli.log {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
