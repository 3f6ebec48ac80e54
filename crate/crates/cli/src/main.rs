mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use commands::{CliError, Report};
use config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// moment trajectories
    Ee,
    /// variation curves and invariant log
    Germ,
    /// coherent-state snapshots and moment constants
    Coherent,
    /// residual of the leading term vs D
    Residual,
    /// direct solve of the nonlinear equation
    Direct,
    /// background, coefficients, snapshots and mode timeline of the perturbation
    Largetime,
    /// leading term vs direct solve with a convergence-order fit
    Compare,
    /// run the acceptance criteria
    Acceptance,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ee => "ee",
            Command::Germ => "germ",
            Command::Coherent => "coherent",
            Command::Residual => "residual",
            Command::Direct => "direct",
            Command::Largetime => "largetime",
            Command::Compare => "compare",
            Command::Acceptance => "acceptance",
        }
    }
}

/// Semiclassical asymptotics of the nonlocal Fisher–KPP equation, cross-checked
/// against a direct solver.
#[derive(Debug, Parser)]
#[command(name = "fkpp", version)]
struct Args {
    command: Command,
    /// TOML experiment file; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory (overrides `output.directory`)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = fkpp_core::acceptance::DEFAULT_SEED)]
    seed: u64,
    /// worker threads for parameter sweeps (0 = all cores)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// treat warnings (and known acceptance failures) as errors
    #[arg(long)]
    strict: bool,
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(vec![config::ConfigIssue {
                    key: "<file>".into(),
                    message: format!("{}: {e}", path.display()),
                }])
            })?;
            ExperimentConfig::parse(&text).map_err(CliError::Config)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output.directory = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<(Report, PathBuf), CliError> {
    let cfg = load(args)?;
    if args.jobs > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build_global();
    }
    let seed = args.seed;
    let report = match args.command {
        Command::Ee => commands::ee(&cfg, seed),
        Command::Germ => commands::germ(&cfg, seed),
        Command::Coherent => commands::coherent(&cfg, seed),
        Command::Residual => commands::residual(&cfg, seed),
        Command::Direct => commands::direct(&cfg, seed),
        Command::Largetime => commands::largetime(&cfg, seed),
        Command::Compare => commands::compare(&cfg, seed),
        Command::Acceptance => commands::acceptance(&cfg, seed, args.strict),
    }?;
    for w in &report.warnings {
        eprintln!("warning\t{w}");
    }
    if args.strict && !report.warnings.is_empty() {
        return Err(CliError::Numeric(format!(
            "{}: {} warning(s) under --strict",
            args.command.name(),
            report.warnings.len()
        )));
    }
    Ok((report, PathBuf::from(&cfg.output.directory)))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok((report, dir)) => {
            for l in &report.lines {
                println!("{l}");
            }
            match report.artifacts.commit(&dir) {
                Ok(paths) => {
                    println!("wrote {} files to {}", paths.len(), dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    let e = CliError::Io(e);
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
