//! Subcommand drivers: each writes its artifacts under the configured output
//! directory and returns the manifest it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bdg::{riccati_residual, solve_bdg};
use crate::config::{ConfigError, RunConfig};
use crate::energy::EnergyReport;
use crate::error::Error;
use crate::grid::Model;
use crate::io::{self, IoError};
use crate::operators::assemble;
use crate::oracle::checks_to_csv;
use crate::scf::{evaluate_state, k_step, solve_coupled, zero_iterate, HistoryRow, SolverState};
use crate::validate::run_validation;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const ERROR_FILE: &str = "error.toml";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Solver(#[from] Error),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{} validation check(s) failed", .0.len())]
    Validation(Vec<String>),
    #[error("{failed} of {total} sweep points failed")]
    Sweep { failed: usize, total: usize, code: i32 },
}

impl RunError {
    /// 2 config, 3 non-convergence, 4 invariant violation, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(Error::NonConvergence { .. }) => 3,
            RunError::Solver(_) | RunError::Validation(_) => 4,
            RunError::Io(_) => 1,
            RunError::Sweep { code, .. } => *code,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Solver(Error::NonConvergence { .. }) => "non_convergence",
            RunError::Solver(_) => "invariant_violation",
            RunError::Validation(_) => "validation_failure",
            RunError::Io(_) => "io",
            RunError::Sweep { .. } => "sweep",
        }
    }

    pub fn record(&self, iterate_index: Option<usize>) -> ErrorRecord {
        let details = match self {
            RunError::Validation(f) => f.clone(),
            _ => Vec::new(),
        };
        ErrorRecord {
            kind: self.kind().into(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            iterate_index,
            details,
        }
    }
}

/// Machine-readable failure description, written to `error.toml` and into
/// the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterate_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `complete`, `incomplete` (still running or interrupted) or `failed`.
    pub status: String,
    pub subcommand: String,
    pub version: String,
    pub backend: String,
    pub warnings: Vec<String>,
    /// Digests of the files written next to the manifest.
    pub files: BTreeMap<String, String>,
    pub summary: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
    /// The fully materialized configuration.
    pub config: RunConfig,
}

impl Manifest {
    fn new(subcommand: &str, cfg: &RunConfig) -> Self {
        Manifest {
            status: "incomplete".into(),
            subcommand: subcommand.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            backend: cfg.backend.as_str().into(),
            warnings: cfg.warnings(),
            files: BTreeMap::new(),
            summary: BTreeMap::new(),
            energy: None,
            error: None,
            config: cfg.clone(),
        }
    }

    pub fn load(dir: &Path) -> Result<Manifest, IoError> {
        let path = dir.join(MANIFEST_FILE);
        toml::from_str(&io::read_text(&path)?)
            .map_err(|e| IoError::Format { path, reason: e.message().to_string() })
    }

    fn write(&self, dir: &Path) -> Result<(), IoError> {
        let text = toml::to_string(self).map_err(|e| IoError::Format { path: dir.into(), reason: e.to_string() })?;
        io::write_file(&dir.join(MANIFEST_FILE), text)
    }
}

/// Output directory with its `INCOMPLETE` marker and running manifest.
struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn start(subcommand: &str, cfg: &RunConfig) -> Result<Run, RunError> {
        let dir = cfg.out_dir.clone();
        io::create_dir(&dir)?;
        let _ = std::fs::remove_file(dir.join(ERROR_FILE));
        io::write_file(&dir.join(INCOMPLETE_MARKER), "run in progress or interrupted\n")?;
        let manifest = Manifest::new(subcommand, cfg);
        for w in &manifest.warnings {
            warn!("{w}");
        }
        manifest.write(&dir)?;
        Ok(Run { dir, manifest })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        io::write_file(&self.dir.join(name), body)?;
        self.manifest.files.insert(name.into(), io::sha256_hex(body.as_bytes()));
        Ok(())
    }

    fn finish(mut self) -> Result<Manifest, RunError> {
        self.manifest.status = "complete".into();
        self.manifest.write(&self.dir)?;
        let _ = std::fs::remove_file(self.dir.join(INCOMPLETE_MARKER));
        Ok(self.manifest)
    }

    fn fail(mut self, err: RunError, iterate_index: Option<usize>) -> RunError {
        let record = err.record(iterate_index);
        error!("{}: {}", record.kind, record.message);
        if let Ok(text) = toml::to_string(&record) {
            let _ = io::write_file(&self.dir.join(ERROR_FILE), text);
        }
        self.manifest.status = "failed".into();
        self.manifest.error = Some(record);
        let _ = self.manifest.write(&self.dir);
        err
    }
}

fn state_summary(s: &SolverState) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("iterate_index".to_string(), s.iterate_index as f64),
        ("mu".to_string(), s.mu),
        ("e_total".to_string(), s.energy.e_total),
        ("riccati_resid".to_string(), s.riccati_resid),
        ("phi_resid".to_string(), s.phi_resid),
        ("gap".to_string(), s.gap),
        ("k_hs".to_string(), s.k.hs_norm()),
        ("k_op".to_string(), s.k.op_norm()),
        ("drift".to_string(), s.drift),
    ])
}

/// Final `phi`, `k`, spectrum and densities of a state.
fn write_state_outputs(run: &mut Run, model: &Model, s: &SolverState) -> Result<(), RunError> {
    let dir = run.dir.clone();
    let d = io::write_field(&dir, "phi", &model.grid, &s.phi)?;
    run.manifest.files.insert("phi.bin".into(), d);
    let d = io::write_kernel(&dir, "k", &model.grid, s.k.values())?;
    run.manifest.files.insert("k.bin".into(), d);
    let ops = assemble(model, &s.phi, &s.k, s.mu)?;
    let sol = solve_bdg(&ops.h, &ops.theta, &s.phi)?;
    run.text("spectrum.csv", &io::spectrum_csv(&sol))?;
    run.manifest.summary.insert("lowest_mode".into(), sol.energies.first().copied().unwrap_or(f64::NAN));
    run.manifest.summary.insert("modes".into(), sol.energies.len() as f64);
    run.text("densities.csv", &io::densities_csv(&model.grid, &s.phi, &s.k)?)?;
    Ok(())
}

pub fn solve(cfg: &RunConfig) -> Result<Manifest, RunError> {
    let model = cfg.model()?;
    let mut run = Run::start("solve", cfg)?;
    let resume = match &cfg.resume {
        Some(p) => match io::load_checkpoint(p, &model.grid) {
            Ok(r) => {
                info!("resuming from iterate {} ({})", r.iterate_index, p.display());
                Some(r)
            }
            Err(e) => return Err(run.fail(e.into(), None)),
        },
        None => None,
    };
    let started = Instant::now();
    let dir = run.dir.clone();
    let mut hook = |s: &SolverState, hist: &[HistoryRow]| -> crate::Result<()> {
        // checkpoint I/O failures must not masquerade as solver errors
        if let Err(e) = io::write_checkpoint(&dir, &model.grid, s, hist) {
            warn!("checkpoint {} not written: {e}", s.iterate_index);
        }
        if let Err(e) = io::write_file(&dir.join("history.csv"), io::history_csv(hist)) {
            warn!("history not written: {e}");
        }
        Ok(())
    };
    match solve_coupled(&model, &cfg.criteria, cfg.backend, resume, &mut hook) {
        Ok(out) => {
            let s = &out.state;
            run.text("history.csv", &io::history_csv(&out.history))?;
            write_state_outputs(&mut run, &model, s)?;
            run.manifest.summary.extend(state_summary(s));
            run.manifest.summary.insert("converged".into(), 1.0);
            run.manifest.summary.insert("mu_excursion".into(), out.mu_excursion);
            run.manifest.summary.insert("mu_zero".into(), out.history.first().map_or(s.mu, |r| r.mu));
            run.manifest.summary.insert("wall_time".into(), started.elapsed().as_secs_f64());
            run.manifest.energy = Some(s.energy.clone());
            info!("converged at iterate {}: mu = {:.15e}, e_total = {:.15e}", s.iterate_index, s.mu, s.energy.e_total);
            run.finish()
        }
        Err(e) => {
            let _ = io::write_file(&run.dir.join("history.csv"), io::history_csv(&e.history));
            let index = e.last_state.as_ref().map(|s| s.iterate_index);
            if let Some(s) = &e.last_state {
                // the offending iterate is kept for inspection
                let _ = io::write_checkpoint(&run.dir, &model.grid, s, &e.history);
                run.manifest.summary.extend(state_summary(s));
            }
            run.manifest.summary.insert("converged".into(), 0.0);
            Err(run.fail(e.error.into(), index))
        }
    }
}

/// The zero iterate only; leaves a checkpoint that `bdg-step` and `solve`
/// can start from.
pub fn hartree(cfg: &RunConfig) -> Result<Manifest, RunError> {
    let model = cfg.model()?;
    let mut run = Run::start("hartree", cfg)?;
    let (h, state) = match zero_iterate(&model) {
        Ok(v) => v,
        Err(e) => return Err(run.fail(e.into(), Some(0))),
    };
    let state = SolverState { damping: cfg.criteria.damping, ..state };
    let history = vec![state.row()];
    io::write_checkpoint(&run.dir, &model.grid, &state, &history)?;
    run.text("history.csv", &io::history_csv(&history))?;
    write_state_outputs(&mut run, &model, &state)?;
    run.manifest.summary.extend(state_summary(&state));
    run.manifest.summary.insert("mu0".into(), h.mu0);
    run.manifest.summary.insert("hartree_energy".into(), h.energy);
    run.manifest.summary.insert("hartree_iterations".into(), h.iterations as f64);
    run.manifest.summary.insert("hartree_residual".into(), h.residual);
    run.manifest.energy = Some(state.energy.clone());
    run.finish()
}

/// One kernel update from a checkpoint (or from the zero iterate when no
/// checkpoint is given). The reported residual is that of the new kernel
/// against the frozen operators of the starting iterate.
pub fn bdg_step(cfg: &RunConfig) -> Result<Manifest, RunError> {
    let model = cfg.model()?;
    let mut run = Run::start("bdg-step", cfg)?;
    let result = (|| -> Result<(SolverState, crate::pair_kernel::PairKernel, f64), RunError> {
        let state = match &cfg.resume {
            Some(p) => {
                let r = io::load_checkpoint(p, &model.grid)?;
                evaluate_state(&model, &r.phi, &r.k, r.mu, r.iterate_index)?
            }
            None => zero_iterate(&model)?.1,
        };
        let k = k_step(&model, &state, cfg.criteria.damping)?;
        let ops = assemble(&model, &state.phi, &state.k, state.mu)?;
        let resid = riccati_residual(k.values(), &ops.h, &ops.theta, &state.phi);
        let sol = solve_bdg(&ops.h, &ops.theta, &state.phi)?;
        run.text("spectrum.csv", &io::spectrum_csv(&sol))?;
        Ok((state, k, resid))
    })();
    let (state, k, resid) = match result {
        Ok(v) => v,
        Err(e) => return Err(run.fail(e, None)),
    };
    let d = io::write_kernel(&run.dir, "k", &model.grid, k.values())?;
    run.manifest.files.insert("k.bin".into(), d);
    let s = &mut run.manifest.summary;
    s.insert("iterate_index".into(), state.iterate_index as f64);
    s.insert("mu".into(), state.mu);
    s.insert("gap".into(), state.gap);
    s.insert("k_hs".into(), k.hs_norm());
    s.insert("k_op".into(), k.op_norm());
    s.insert("riccati_resid".into(), resid);
    run.finish()
}

/// Oracle and invariant suite. Artifacts are written only when `cfg` names
/// an output directory.
pub fn validate(cfg: Option<&RunConfig>, seed: u64) -> Result<crate::validate::ValidationReport, RunError> {
    let report = run_validation(seed)?;
    for c in &report.oracle {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        info!("{mark} {}/{}: expected {:.12e}, actual {:.12e}", c.case, c.quantity, c.expected, c.actual);
    }
    for c in &report.invariants {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        info!("{mark} {}: {:.3e} (bound {:.3e})", c.name, c.value, c.bound);
    }
    let failures = report.failures();
    if let Some(cfg) = cfg {
        let mut run = Run::start("validate", cfg)?;
        run.text("oracle.csv", &checks_to_csv(&report.oracle))?;
        run.text("invariants.csv", &report.invariants_csv())?;
        run.manifest.summary.insert("oracle_checks".into(), report.oracle.len() as f64);
        run.manifest.summary.insert("invariant_checks".into(), report.invariants.len() as f64);
        run.manifest.summary.insert("failures".into(), failures.len() as f64);
        if !failures.is_empty() {
            return Err(run.fail(RunError::Validation(failures), None));
        }
        run.finish()?;
    } else if !failures.is_empty() {
        return Err(RunError::Validation(failures));
    }
    Ok(report)
}

pub fn sweep_dir_name((g, beta, n): (f64, f64, u64)) -> String {
    format!("g{g}_beta{beta}_N{n}")
}

/// Independent solves over the cartesian product of the sweep lists, at most
/// `workers` at a time, each in its own subdirectory.
pub fn sweep(cfg: &RunConfig, workers: usize) -> Result<Manifest, RunError> {
    let points = cfg.sweep_points();
    let mut run = Run::start("sweep", cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| run_io(&cfg.out_dir, e.to_string()))?;
    let results: Vec<(String, Result<Manifest, RunError>)> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let name = sweep_dir_name(*p);
                let sub = cfg.at_point(*p, cfg.out_dir.join(&name));
                (name, solve(&sub))
            })
            .collect()
    });
    let mut table = String::from("dir,g,beta,n_particles,status,exit_code,iterate_index,mu,e_total,k_hs\n");
    let mut worst = 0;
    let mut failed = 0;
    for ((name, res), (g, beta, n)) in results.iter().zip(&points) {
        let (status, code, m) = match res {
            Ok(m) => ("complete", 0, Some(&m.summary)),
            Err(e) => ("failed", e.exit_code(), None),
        };
        if code != 0 {
            failed += 1;
            worst = worst.max(code);
        }
        let get = |k: &str| m.and_then(|s| s.get(k)).map_or_else(String::new, |v| io::fmt17(*v));
        table.push_str(&format!(
            "{name},{},{},{n},{status},{code},{},{},{},{}\n",
            io::fmt17(*g),
            io::fmt17(*beta),
            get("iterate_index"),
            get("mu"),
            get("e_total"),
            get("k_hs")
        ));
    }
    run.text("summary.csv", &table)?;
    run.manifest.summary.insert("points".into(), points.len() as f64);
    run.manifest.summary.insert("failed".into(), failed as f64);
    if failed > 0 {
        let err = RunError::Sweep { failed, total: points.len(), code: worst };
        return Err(run.fail(err, None));
    }
    run.finish()
}

fn run_io(path: &Path, reason: String) -> RunError {
    RunError::Io(IoError::Format { path: path.into(), reason })
}
