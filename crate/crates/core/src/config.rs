//! Run configuration: strict TOML, validated before any compute.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::{build_grid, Boundary, Model, Potentials, Profile, Trap};
use crate::scf::{Backend, ConvergenceCriteria};

/// Largest node count the dense solver accepts.
pub const MAX_NODES: usize = 2048;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{field}: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
    pub line: Option<usize>,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError { field: field.into(), reason: reason.into(), line: None }
    }
}

fn default_dim() -> usize {
    1
}
fn default_boundary() -> Boundary {
    Boundary::Dirichlet
}
fn default_beta() -> f64 {
    1.0 / 6.0
}
fn default_n() -> u64 {
    100
}
fn default_trap() -> Trap {
    Trap::Harmonic { strength: 1.0 }
}
fn default_profile() -> Profile {
    Profile::Gaussian { width: 1.0 }
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Half-width `L` of the box `[-L, L]^d`.
    pub extent: f64,
    /// Nodes per axis.
    pub points: usize,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub g: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_n")]
    pub n_particles: u64,
    #[serde(default = "default_trap")]
    pub trap: Trap,
    #[serde(default = "default_profile")]
    pub profile: Profile,
}

/// Values swept by the `sweep` subcommand; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub g: Vec<f64>,
    pub beta: Vec<f64>,
    pub n_particles: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub criteria: ConvergenceCriteria,
    #[serde(default)]
    pub sweep: SweepConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub max_outer: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Pulls the offending key out of a serde message such as
/// "unknown field `foo`, expected one of ...".
fn field_from_message(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

pub fn parse_config_str(src: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(src).map_err(|e| {
        let msg = e.message().trim().to_string();
        ConfigError {
            field: field_from_message(&msg).unwrap_or_else(|| "toml".into()),
            reason: msg,
            line: e.span().map(|s| line_of(src, s.start)),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&src)
}

fn check(ok: bool, field: &str, reason: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(field, reason()))
    }
}

fn check_beta(beta: f64, field: &str) -> Result<(), ConfigError> {
    check((0.0..=1.0).contains(&beta), field, || "outside [0,1]".into())
}

fn check_g(g: f64, field: &str) -> Result<(), ConfigError> {
    check(g.is_finite() && g >= 0.0, field, || format!("must be finite and nonnegative, got {g}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let gr = &self.grid;
        check((1..=3).contains(&gr.dim), "dim", || format!("must be 1, 2 or 3, got {}", gr.dim))?;
        check(gr.extent.is_finite() && gr.extent > 0.0, "extent", || format!("must be positive, got {}", gr.extent))?;
        check(gr.points >= 4, "points", || format!("need at least 4 nodes per axis, got {}", gr.points))?;
        let nodes = gr.points.checked_pow(gr.dim as u32).unwrap_or(usize::MAX);
        check(nodes <= MAX_NODES, "points", || {
            format!("grid has {nodes} nodes; the dense solver supports at most {MAX_NODES}")
        })?;
        let p = &self.potential;
        check_g(p.g, "g")?;
        check_beta(p.beta, "beta")?;
        check(p.n_particles >= 1, "n_particles", || "must be at least 1".into())?;
        if let Trap::Harmonic { strength } = p.trap {
            check(strength.is_finite() && strength >= 0.0, "trap", || {
                format!("harmonic strength must be nonnegative, got {strength}")
            })?;
        }
        self.criteria.validate().map_err(|(f, why)| ConfigError::new(f, why))?;
        for g in &self.sweep.g {
            check_g(*g, "sweep.g")?;
        }
        for b in &self.sweep.beta {
            check_beta(*b, "sweep.beta")?;
        }
        check(self.sweep.n_particles.iter().all(|n| *n >= 1), "sweep.n_particles", || "must be at least 1".into())?;
        check(self.resume.is_none() || self.backend == Backend::Iterative, "resume", || {
            "only the iterative backend can resume".into()
        })?;
        // remaining checks (profile tables, trap values on the grid) happen on construction
        self.model().map(|_| ())
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let betas = std::iter::once(self.potential.beta).chain(self.sweep.beta.iter().copied());
        if betas.into_iter().any(|b| b > 1.0 / 6.0) {
            out.push("beta outside iterative-convergence regime β ≤ 1/6".to_string());
        }
        out
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(r) = &o.resume {
            self.resume = Some(r.clone());
        }
        if let Some(m) = o.max_outer {
            self.criteria.max_outer = m;
        }
        if let Some(t) = o.tol {
            check(t > 0.0, "tol", || format!("must be positive, got {t}"))?;
            self.criteria.tol_riccati = t;
            self.criteria.tol_phi = t;
            self.criteria.tol_mu = 0.1 * t;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.validate()
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        let gr = &self.grid;
        let p = &self.potential;
        let grid = build_grid(gr.dim, gr.extent, gr.points, gr.boundary).map_err(|e| ConfigError::new("grid", e.to_string()))?;
        let pot = Potentials::new(&grid, p.trap.clone(), p.profile.clone(), p.g, p.beta, p.n_particles)
            .map_err(|e| ConfigError::new("potential", e.to_string()))?;
        Model::new(grid, pot).map_err(|e| ConfigError::new("potential", e.to_string()))
    }

    /// Every `(g, β, N)` point of the sweep, in lexicographic order.
    pub fn sweep_points(&self) -> Vec<(f64, f64, u64)> {
        let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let gs = or(&self.sweep.g, self.potential.g);
        let bs = or(&self.sweep.beta, self.potential.beta);
        let ns = if self.sweep.n_particles.is_empty() { vec![self.potential.n_particles] } else { self.sweep.n_particles.clone() };
        let mut out = Vec::with_capacity(gs.len() * bs.len() * ns.len());
        for g in &gs {
            for b in &bs {
                for n in &ns {
                    out.push((*g, *b, *n));
                }
            }
        }
        out
    }

    /// Copy of this configuration at one sweep point, writing into `out_dir`.
    pub fn at_point(&self, (g, beta, n): (f64, f64, u64), out_dir: PathBuf) -> RunConfig {
        let mut c = self.clone();
        c.potential.g = g;
        c.potential.beta = beta;
        c.potential.n_particles = n;
        c.sweep = SweepConfig::default();
        c.out_dir = out_dir;
        c
    }

    /// The fully materialized configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}
