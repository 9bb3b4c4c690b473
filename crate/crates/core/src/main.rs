use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use bec_pairing::config::{parse_config, ConfigError, Overrides, RunConfig};
use bec_pairing::run::{self, RunError};

#[derive(Parser, Debug)]
#[command(name = "bec-pairing", version, about = "Condensate and pair-excitation kernel solver for trapped Bose gases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML). Optional for `validate` only.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint directory (or a previous run directory) to start from.
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
    #[arg(long, global = true)]
    max_outer: Option<usize>,
    /// Sets the Riccati and φ tolerances; the μ tolerance becomes tol/10.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Concurrent solves for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// error, warn, info or debug.
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
    /// Seed of the randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Full coupled solve with checkpoints.
    Solve,
    /// Zero iterate (Hartree condensate, k = 0) only.
    Hartree,
    /// One kernel update from a checkpoint.
    BdgStep,
    /// Oracle and invariant suite.
    Validate,
    /// Independent solves over the listed (g, beta, N) values.
    Sweep,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out.clone(),
            resume: self.resume.clone(),
            max_outer: self.max_outer,
            tol: self.tol,
            seed: self.seed,
        }
    }

    fn load(&self) -> Result<Option<RunConfig>, RunError> {
        let Some(path) = &self.config else {
            if self.command == Command::Validate {
                return Ok(None);
            }
            return Err(ConfigError::new("config", "--config PATH is required").into());
        };
        let mut cfg = parse_config(path)?;
        cfg.apply(&self.overrides())?;
        Ok(Some(cfg))
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let cfg = cli.load()?;
    let need = || cfg.as_ref().expect("config present for this subcommand");
    match cli.command {
        Command::Solve => {
            let m = run::solve(need())?;
            println!("converged: mu = {:.17e}, e_total = {:.17e}", m.summary["mu"], m.summary["e_total"]);
        }
        Command::Hartree => {
            let m = run::hartree(need())?;
            println!("zero iterate: mu0 = {:.17e}", m.summary["mu0"]);
        }
        Command::BdgStep => {
            let m = run::bdg_step(need())?;
            println!("k step: |k|_HS = {:.17e}, riccati residual = {:.3e}", m.summary["k_hs"], m.summary["riccati_resid"]);
        }
        Command::Validate => {
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let cfg = match cfg {
                Some(c) => Some(c),
                None => cli.out.as_ref().map(|_| default_validate_config(cli)).transpose()?,
            };
            let report = run::validate(cfg.as_ref(), seed)?;
            println!("validation passed: {} oracle checks, {} invariants", report.oracle.len(), report.invariants.len());
        }
        Command::Sweep => {
            let m = run::sweep(need(), cli.workers)?;
            println!("sweep complete: {} points", m.summary["points"]);
        }
    }
    Ok(())
}

/// `validate --out DIR` without a config: the standard problem's settings.
fn default_validate_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = bec_pairing::config::parse_config_str("[grid]\nextent = 8.0\npoints = 64\n[potential]\ng = 0.1\n")?;
    cfg.apply(&cli.overrides())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = e.record(None);
            eprintln!("error: {}", record.message);
            if let Ok(text) = toml::to_string(&record) {
                eprint!("{text}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
