use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfd_cli::config::FpQuery;
use sfd_cli::mnist::Stage;
use sfd_cli::{CliError, ExperimentConfig};
use sfd_core::colormnist::{Corruption, Variant};
use sfd_core::evaluation::OodMode;

/// Spurious-feature diversification laboratory.
#[derive(Debug, Parser)]
#[command(name = "sfd", version)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Never touch the network; read cached data only.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form, enumerated and Gaussian-approximation accuracies.
    Theory(TheoryArgs),
    /// Monte-Carlo OOD evaluation of the worked examples.
    Simulate(SimulateArgs),
    /// Colored-MNIST pipeline stage.
    Mnist(MnistArgs),
    /// Theory-versus-simulation and ensemble tables from earlier runs.
    Report,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    /// Example name (repeatable): 1-1, 1-2, 2-1, 2-2.
    #[arg(long = "example")]
    examples: Vec<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Evaluate F_p at `--x` instead of the example table.
    #[arg(long, requires = "x")]
    fp: bool,
    #[arg(long)]
    x: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long = "example")]
    examples: Vec<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    n_env: Option<usize>,
    #[arg(long, conflicts_with = "analytic")]
    n_per_env: Option<usize>,
    /// Score environments in the small-noise limit instead of sampling.
    #[arg(long)]
    analytic: bool,
    /// Add an imbalanced weight-space ensemble (repeatable).
    #[arg(long = "lambda")]
    lambdas: Vec<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct MnistArgs {
    #[arg(value_enum)]
    stage: Stage,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    corruption: Option<CorruptionArg>,
    /// Test shift probability (repeatable; replaces the grid).
    #[arg(long = "p")]
    p_grid: Vec<f64>,
    /// Number of model pairs; seed `s` trains models `2s` and `2s+1`.
    #[arg(long)]
    pairs: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    mirror: Option<String>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum VariantArg {
    Multi,
    Single,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum CorruptionArg {
    Uniform,
    OtherColors,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.offline |= cli.offline;
    match &cli.command {
        Command::Theory(a) => {
            let t = &mut cfg.theory;
            if let Some(p) = a.p {
                t.p = p;
            }
            if let Some(k) = a.k {
                t.k = k;
            }
            if a.fp {
                let x = a.x.ok_or_else(|| CliError::Usage("--fp needs --x".into()))?;
                t.fp = vec![FpQuery { x, p: t.p, k: t.k }];
                t.examples.clear();
            }
            if !a.examples.is_empty() {
                t.examples = a.examples.clone();
            }
        }
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            if !a.examples.is_empty() {
                s.examples = a.examples.clone();
            }
            if let Some(p) = a.p {
                s.p = p;
            }
            if let Some(n) = a.n_env {
                s.n_env = n;
            }
            if a.analytic {
                s.mode = OodMode::Analytic;
            } else if let Some(n) = a.n_per_env {
                s.mode = OodMode::Sampled { n_per_env: n };
            }
            if !a.lambdas.is_empty() {
                s.lambdas = a.lambdas.clone();
            }
            if let Some(sigma) = a.sigma {
                s.sigma = sigma;
            }
        }
        Command::Mnist(a) => {
            let m = &mut cfg.mnist;
            if let Some(v) = a.variant {
                m.variant = match v {
                    VariantArg::Multi => Variant::Multi,
                    VariantArg::Single => Variant::Single,
                };
            }
            if let Some(c) = a.corruption {
                m.corruption = match c {
                    CorruptionArg::Uniform => Corruption::Uniform,
                    CorruptionArg::OtherColors => Corruption::OtherColors,
                };
            }
            if !a.p_grid.is_empty() {
                m.p_grid = a.p_grid.clone();
            }
            if let Some(n) = a.pairs {
                m.seeds = (0..n).collect();
            }
            if let Some(s) = a.steps {
                m.train.steps = s;
            }
            if let Some(ls) = a.label_smoothing {
                m.train.label_smoothing = ls;
            }
            if a.n_train.is_some() {
                m.n_train = a.n_train;
            }
            if a.n_test.is_some() {
                m.n_test = a.n_test;
            }
            if let Some(url) = &a.mirror {
                m.mirror = url.clone();
            }
        }
        Command::Report => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Theory(_) => sfd_cli::theory_command(&cfg).map(|r| r.0),
        Command::Simulate(_) => sfd_cli::simulate_command(&cfg).map(|r| r.0),
        Command::Mnist(a) => sfd_cli::mnist::run_stage(&cfg, a.stage),
        Command::Report => sfd_cli::report::run_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sfd: error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
