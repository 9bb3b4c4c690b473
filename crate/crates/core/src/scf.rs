//! Outer self-consistency: the alternating k-step / φ-step iteration and the
//! direct minimization of the ψ-form energy.

use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::bdg::{kernel_from_bdg, riccati_residual, solve_bdg};
use crate::energy::{psi_form_energy, psi_form_gradient_frames, total_energy, EnergyReport};
use crate::error::{Error, Result};
use crate::grid::{CMatrix, CVector, Field, Kernel, Model, C64};
use crate::hartree::{ground_state, solve_hartree, HartreeOptions, HartreeResult};
use crate::operators::{assemble, phi_residual, PhiOperator};
use crate::pair_kernel::{densities_from_kernel, project_frame, project_offcondensate, psi_inverse, PairKernel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceCriteria {
    pub tol_riccati: f64,
    pub tol_phi: f64,
    pub tol_mu: f64,
    pub max_outer: usize,
    /// Kernel mixing weight `α_k ∈ (0, 1]`.
    pub damping: f64,
    /// Mixing weight of the condensate SCF inside the φ-step.
    pub phi_mixing: f64,
    pub max_phi_iter: usize,
    /// Iteration cap of the direct backend.
    pub max_direct_iter: usize,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        ConvergenceCriteria {
            tol_riccati: 1e-8,
            tol_phi: 1e-8,
            tol_mu: 1e-9,
            max_outer: 50,
            damping: 1.0,
            phi_mixing: 0.5,
            max_phi_iter: 1000,
            max_direct_iter: 20000,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [("tol_riccati", self.tol_riccati), ("tol_phi", self.tol_phi), ("tol_mu", self.tol_mu)];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err((name, format!("must be positive, got {v}")));
            }
        }
        if self.max_outer < 1 {
            return Err(("max_outer", "must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(("damping", format!("outside (0, 1]: {}", self.damping)));
        }
        if !(self.phi_mixing > 0.0 && self.phi_mixing <= 1.0) {
            return Err(("phi_mixing", format!("outside (0, 1]: {}", self.phi_mixing)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Iterative,
    Direct,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Iterative => "iterative",
            Backend::Direct => "direct",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub iterate_index: usize,
    pub phi: Field,
    pub k: PairKernel,
    pub mu: f64,
    pub energy: EnergyReport,
    pub riccati_resid: f64,
    pub phi_resid: f64,
    pub gap: f64,
    /// Seconds since the solve (or the resumed segment) started.
    pub wall_time: f64,
    /// Kernel mixing weight in force when this state was produced.
    pub damping: f64,
    /// `‖k - Q̄kQ‖_HS` removed when re-attaching `k` to this `φ`.
    pub drift: f64,
}

impl SolverState {
    pub fn row(&self) -> HistoryRow {
        HistoryRow {
            n: self.iterate_index,
            mu: self.mu,
            e_total: self.energy.e_total,
            riccati_resid: self.riccati_resid,
            phi_resid: self.phi_resid,
            gap: self.gap,
            k_hs: self.k.hs_norm(),
            drift: self.drift,
        }
    }

    fn converged(&self, previous_mu: f64, c: &ConvergenceCriteria) -> bool {
        self.riccati_resid < c.tol_riccati && self.phi_resid < c.tol_phi && (self.mu - previous_mu).abs() < c.tol_mu
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub n: usize,
    pub mu: f64,
    pub e_total: f64,
    pub riccati_resid: f64,
    pub phi_resid: f64,
    pub gap: f64,
    pub k_hs: f64,
    pub drift: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub state: SolverState,
    pub history: Vec<HistoryRow>,
    pub backend: Backend,
    /// `max_n |μ_n - μ_0|`.
    pub mu_excursion: f64,
}

#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct SolveError {
    pub error: Error,
    pub history: Vec<HistoryRow>,
    pub last_state: Option<Box<SolverState>>,
}

impl SolveError {
    fn bare(error: Error) -> Self {
        SolveError { error, history: Vec::new(), last_state: None }
    }
}

/// Where to pick up an interrupted iterative solve.
#[derive(Clone, Debug)]
pub struct Resume {
    pub phi: Field,
    pub k: PairKernel,
    pub mu: f64,
    pub iterate_index: usize,
    pub damping: f64,
    pub history: Vec<HistoryRow>,
}

pub type IterateHook<'a> = &'a mut dyn FnMut(&SolverState, &[HistoryRow]) -> Result<()>;

/// Evaluates every diagnostic of `(φ, k; μ)` with fresh operators.
pub fn evaluate_state(model: &Model, phi: &Field, k: &PairKernel, mu: f64, index: usize) -> Result<SolverState> {
    let ops = assemble(model, phi, k, mu)?;
    Ok(SolverState {
        iterate_index: index,
        phi: phi.clone(),
        k: k.clone(),
        mu,
        energy: total_energy(model, phi, k)?,
        riccati_resid: riccati_residual(k.values(), &ops.h, &ops.theta, phi),
        phi_resid: phi_residual(model, phi, k, mu)?,
        gap: ops.gap_margin,
        wall_time: 0.0,
        damping: 1.0,
        drift: 0.0,
    })
}

/// One kernel update: BdG solve with `H[n]`, `Θ[n]` frozen, optional mixing
/// with the previous kernel, re-projection.
pub fn k_step(model: &Model, state: &SolverState, damping: f64) -> Result<PairKernel> {
    if !(state.gap > 0.0) {
        return Err(Error::GapViolated(state.gap));
    }
    let ops = assemble(model, &state.phi, &state.k, state.mu)?;
    let sol = solve_bdg(&ops.h, &ops.theta, &state.phi)?;
    let fresh = kernel_from_bdg(&sol, &state.phi)?;
    if damping >= 1.0 {
        return Ok(fresh);
    }
    let mixed = state.k.frame() * C64::from(1.0 - damping) + fresh.frame() * C64::from(damping);
    project_offcondensate(&Kernel::from_frame(mixed), &state.phi)
}

/// Condensate update at fixed kernel: SCF on the real-mode operator
/// `L[φ] + A` (only the direct term depends on φ), then μ from the
/// quadrature formula.
pub fn phi_step(model: &Model, k: &PairKernel, start: &Field, c: &ConvergenceCriteria) -> Result<(Field, f64)> {
    if !k.is_real(0.0) || start.max_imag() > 0.0 {
        return Err(Error::NotRealField("phi_step"));
    }
    let dens = densities_from_kernel(k)?;
    let tol = 1e-2 * c.tol_phi;
    let mut phi = start.normalized().into_frame();
    let mut res = f64::INFINITY;
    for it in 0..=c.max_phi_iter {
        let a = PhiOperator::new(model, &phi, &dens).real_mode();
        let aphi = &a * &phi;
        let mu = phi.dotc(&aphi).re;
        res = (aphi - &phi * C64::from(mu)).norm();
        if res < tol {
            debug!("phi step converged after {it} passes (residual {res:.3e})");
            let field = Field::from_frame(phi);
            let mu = crate::energy::chemical_potential(model, &field, k)?;
            return Ok((field, mu));
        }
        let (_, fresh) = ground_state(&a)?;
        let fresh = if fresh.dotc(&phi).re < 0.0 { -fresh } else { fresh };
        let mixed = &phi * C64::from(1.0 - c.phi_mixing) + fresh * C64::from(c.phi_mixing);
        phi = &mixed / C64::from(mixed.norm());
    }
    Err(Error::NonConvergence { iterations: c.max_phi_iter, residual: res })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    pub gap: f64,
    pub theta_hs: f64,
    pub mu: f64,
    /// `‖Θ‖_HS / N^{3β}`, the constant of the induction bound.
    pub theta_scaled: f64,
}

/// Recomputes the gap of the current state and logs the quantities entering
/// the induction bounds.
pub fn monitor_gap(model: &Model, state: &SolverState) -> Result<GapReport> {
    let ops = assemble(model, &state.phi, &state.k, state.mu)?;
    let p = &model.potentials;
    let theta_hs = ops.theta.hs_norm();
    let report = GapReport {
        gap: ops.gap_margin,
        theta_hs,
        mu: state.mu,
        theta_scaled: theta_hs / p.n().powf(3.0 * p.beta),
    };
    debug!(
        "iterate {}: gap {:.6e}, |Theta|_HS {:.6e} (= {:.3e} N^3b), mu {:.12e}",
        state.iterate_index, report.gap, theta_hs, report.theta_scaled, report.mu
    );
    Ok(report)
}

fn log_state(s: &SolverState) {
    info!(
        "n={} mu={:.15e} e_total={:.15e} riccati={:.3e} phi={:.3e} gap={:.6e}",
        s.iterate_index, s.mu, s.energy.e_total, s.riccati_resid, s.phi_resid, s.gap
    );
}

fn warn_regime(model: &Model) {
    if model.potentials.beta > 1.0 / 6.0 {
        warn!("beta = {} is outside the iterative-convergence regime beta <= 1/6", model.potentials.beta);
    }
}

pub fn solve_coupled(
    model: &Model,
    criteria: &ConvergenceCriteria,
    backend: Backend,
    resume: Option<Resume>,
    hook: IterateHook<'_>,
) -> std::result::Result<SolveOutcome, SolveError> {
    criteria
        .validate()
        .map_err(|(f, why)| SolveError::bare(Error::Dimension(format!("criteria.{f}: {why}"))))?;
    warn_regime(model);
    match backend {
        Backend::Iterative => solve_iterative(model, criteria, resume, hook),
        Backend::Direct => {
            if resume.is_some() {
                return Err(SolveError::bare(Error::Dimension("the direct backend cannot resume".into())));
            }
            solve_direct(model, criteria, hook)
        }
    }
}

pub fn zero_iterate(model: &Model) -> Result<(HartreeResult, SolverState)> {
    let h = solve_hartree(model, &HartreeOptions::default())?;
    let k0 = PairKernel::zero(&h.phi0);
    let state = evaluate_state(model, &h.phi0, &k0, h.mu0, 0)?;
    Ok((h, state))
}

fn solve_iterative(
    model: &Model,
    c: &ConvergenceCriteria,
    resume: Option<Resume>,
    hook: IterateHook<'_>,
) -> std::result::Result<SolveOutcome, SolveError> {
    let start = Instant::now();
    let (mut state, mut history) = match resume {
        None => {
            let (_, s) = zero_iterate(model).map_err(SolveError::bare)?;
            (SolverState { damping: c.damping, ..s }, Vec::new())
        }
        Some(r) => {
            let s = evaluate_state(model, &r.phi, &r.k, r.mu, r.iterate_index).map_err(SolveError::bare)?;
            let mut hist = r.history;
            hist.retain(|row| row.n <= r.iterate_index);
            // the drift is a property of how the iterate was produced, not of (φ, k, μ)
            let drift = hist.iter().find(|row| row.n == r.iterate_index).map_or(0.0, |row| row.drift);
            hist.retain(|row| row.n < r.iterate_index);
            (SolverState { damping: r.damping, drift, ..s }, hist)
        }
    };
    let fail = |error: Error, history: &[HistoryRow], state: &SolverState| SolveError {
        error,
        history: history.to_vec(),
        last_state: Some(Box::new(state.clone())),
    };
    let mu0 = history.first().map_or(state.mu, |r| r.mu);
    if history.last().map(|r| r.n) != Some(state.iterate_index) {
        history.push(state.row());
        log_state(&state);
        if state.iterate_index == 0 {
            hook(&state, &history).map_err(|e| fail(e, &history, &state))?;
        }
    }
    let mut excursion = history.iter().map(|r| (r.mu - mu0).abs()).fold(0.0, f64::max);
    while state.iterate_index < c.max_outer {
        if !(state.gap > 0.0) {
            return Err(fail(Error::GapViolated(state.gap), &history, &state));
        }
        let mut damping = state.damping;
        let next = loop {
            let candidate = advance(model, &state, damping, c).map_err(|e| fail(e, &history, &state))?;
            let rise = candidate.energy.e_total - state.energy.e_total;
            if rise <= 1e-10 || damping < 1.0 / 1024.0 {
                if rise > 1e-10 {
                    warn!("energy rose by {rise:.3e} at minimum damping; accepting iterate");
                }
                break candidate;
            }
            warn!("energy rose by {rise:.3e}; rejecting step and halving damping to {}", damping / 2.0);
            damping /= 2.0;
        };
        let previous_mu = state.mu;
        state = SolverState { wall_time: start.elapsed().as_secs_f64(), ..next };
        excursion = excursion.max((state.mu - mu0).abs());
        history.push(state.row());
        log_state(&state);
        monitor_gap(model, &state).map_err(|e| fail(e, &history, &state))?;
        hook(&state, &history).map_err(|e| fail(e, &history, &state))?;
        if !(state.gap > 0.0) {
            return Err(fail(Error::GapViolated(state.gap), &history, &state));
        }
        if state.converged(previous_mu, c) {
            info!("converged at outer iterate {}", state.iterate_index);
            return Ok(SolveOutcome { state, history, backend: Backend::Iterative, mu_excursion: excursion });
        }
    }
    let residual = state.riccati_resid.max(state.phi_resid);
    Err(fail(Error::NonConvergence { iterations: state.iterate_index, residual }, &history, &state))
}

fn advance(model: &Model, state: &SolverState, damping: f64, c: &ConvergenceCriteria) -> Result<SolverState> {
    let k_new = k_step(model, state, damping)?;
    let (phi, mu) = phi_step(model, &k_new, &state.phi, c)?;
    let k = project_offcondensate(k_new.values(), &phi)?;
    let drift = (k.frame() - k_new.frame()).norm();
    let s = evaluate_state(model, &phi, &k, mu, state.iterate_index + 1)?;
    Ok(SolverState { damping, drift, ..s })
}

/// Projected Barzilai-Borwein descent on `𝓔̃[φ,ψ]/N` with `‖φ‖ = 1`,
/// `ψ ⊥ φ`, μ read off as the Rayleigh quotient. Works in the scaled
/// variable `χ = ψ/√N` so both blocks have comparable curvature.
fn solve_direct(
    model: &Model,
    c: &ConvergenceCriteria,
    hook: IterateHook<'_>,
) -> std::result::Result<SolveOutcome, SolveError> {
    let start = Instant::now();
    let n_part = model.n();
    let root_n = n_part.sqrt();
    let h = solve_hartree(model, &HartreeOptions::default()).map_err(SolveError::bare)?;
    let len = model.len();
    let mut phi = h.phi0.frame().clone();
    let mut psi = CMatrix::zeros(len, len);
    let mut history: Vec<HistoryRow> = Vec::new();
    let mut excursion: f64 = 0.0;
    let mu0 = h.mu0;
    let mut previous_mu = mu0;

    // merit = 𝓔̃/N - μ‖ψ‖²/N at frozen μ, gradient in (φ, χ)
    let eval = |phi: &CVector, psi: &CMatrix| -> Result<(f64, f64, CVector, CMatrix)> {
        let value = psi_form_energy(model, &Field::from_frame(phi.clone()), &Kernel::from_frame(psi.clone()))? / n_part;
        let (gp, gs) = psi_form_gradient_frames(model, phi, psi)?;
        let gp = gp / C64::from(n_part);
        let mu = 0.5 * phi.dotc(&gp).re;
        let gp = gp - phi * C64::from(2.0 * mu);
        let gs = (gs / C64::from(n_part) - psi * C64::from(2.0 * mu / n_part)) * C64::from(root_n);
        let gs = project_frame(&gs, &Field::from_frame(phi.clone()));
        Ok((value, mu, gp, gs))
    };
    let merit = |value: f64, psi: &CMatrix, mu: f64| value - mu * psi.norm_squared() / n_part;
    let retract = |phi: &CVector, psi: &CMatrix| -> (CVector, CMatrix) {
        let phi = phi / C64::from(phi.norm());
        let psi = project_frame(psi, &Field::from_frame(phi.clone()));
        (phi, psi)
    };

    let (mut value, mut mu, mut gp, mut gs) = eval(&phi, &psi).map_err(SolveError::bare)?;
    let mut step = 1e-2;
    let mut grad_tol = 1e-8;
    let mut last_eval = 0;
    let fail = |error: Error, history: &[HistoryRow]| SolveError { error, history: history.to_vec(), last_state: None };
    for it in 0..=c.max_direct_iter {
        let gnorm = (gp.norm_squared() + gs.norm_squared()).sqrt();
        if gnorm < grad_tol || it == c.max_direct_iter || it - last_eval >= 200 {
            last_eval = it;
            let field = Field::from_frame(phi.clone());
            let k = psi_inverse(&Kernel::from_frame(psi.clone()), &field).map_err(|e| fail(e, &history))?;
            let mu_q = crate::energy::chemical_potential(model, &field, &k).map_err(|e| fail(e, &history))?;
            let mut state = evaluate_state(model, &field, &k, mu_q, it).map_err(|e| fail(e, &history))?;
            state.wall_time = start.elapsed().as_secs_f64();
            excursion = excursion.max((state.mu - mu0).abs());
            history.push(state.row());
            debug!("direct iteration {it}: |grad| {gnorm:.3e}");
            log_state(&state);
            hook(&state, &history).map_err(|e| fail(e, &history))?;
            if !(state.gap > 0.0) {
                return Err(SolveError {
                    error: Error::GapViolated(state.gap),
                    history,
                    last_state: Some(Box::new(state)),
                });
            }
            if state.converged(previous_mu, c) {
                info!("direct backend converged after {it} iterations");
                return Ok(SolveOutcome { state, history, backend: Backend::Direct, mu_excursion: excursion });
            }
            previous_mu = state.mu;
            if gnorm < grad_tol {
                grad_tol = (grad_tol * 0.1).max(1e-15);
            }
            if it == c.max_direct_iter {
                let residual = state.riccati_resid.max(state.phi_resid);
                return Err(SolveError {
                    error: Error::NonConvergence { iterations: it, residual },
                    history,
                    last_state: Some(Box::new(state)),
                });
            }
        }
        let m0 = merit(value, &psi, mu);
        let slope = -(gnorm * gnorm);
        let mut t = step;
        let mut accepted = None;
        for _ in 0..40 {
            let (p1, s1) = retract(&(&phi - &gp * C64::from(t)), &(&psi - &gs * C64::from(t * root_n)));
            let (v1, mu1, gp1, gs1) = eval(&p1, &s1).map_err(|e| fail(e, &history))?;
            let m1 = merit(v1, &s1, mu);
            if m1 <= m0 + 1e-4 * t * slope + 1e-14 * m0.abs().max(1.0) {
                accepted = Some((p1, s1, v1, mu1, gp1, gs1));
                break;
            }
            t *= 0.5;
        }
        let Some((p1, s1, v1, mu1, gp1, gs1)) = accepted else {
            let residual = (gp.norm_squared() + gs.norm_squared()).sqrt();
            return Err(fail(Error::NonConvergence { iterations: it, residual }, &history));
        };
        // Barzilai-Borwein step from the change of iterate and gradient
        let dphi = &p1 - &phi;
        let dchi = (&s1 - &psi) / C64::from(root_n);
        let dgp = &gp1 - &gp;
        let dgs = &gs1 - &gs;
        let ss = dphi.norm_squared() + dchi.norm_squared();
        let sy = dphi.dotc(&dgp).re + (dchi.adjoint() * &dgs).trace().re;
        step = if sy > 0.0 { (ss / sy).clamp(1e-6, 10.0) } else { (2.0 * t).min(10.0) };
        phi = p1;
        psi = s1;
        value = v1;
        mu = mu1;
        gp = gp1;
        gs = gs1;
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{harmonic_trap, standard_problem, uniform_gas};

    fn run(model: &Model, backend: Backend) -> SolveOutcome {
        let mut hook = |_: &SolverState, _: &[HistoryRow]| Ok(());
        solve_coupled(model, &ConvergenceCriteria::default(), backend, None, &mut hook).unwrap()
    }

    #[test]
    fn noninteracting_converges_immediately() {
        let model = harmonic_trap(1, 10.0, 256, 0.0, 1.0 / 6.0, 100).unwrap();
        let out = run(&model, Backend::Iterative);
        assert_eq!(out.state.iterate_index, 1);
        assert!((out.state.mu - 1.0).abs() < 2e-3);
        assert!(out.state.k.frame().iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn standard_problem_iterative() {
        let model = standard_problem(100).unwrap();
        let out = run(&model, Backend::Iterative);
        let s = &out.state;
        assert!(s.riccati_resid < 1e-8 && s.phi_resid < 1e-8 && s.gap > 0.0);
        assert!(out.history.iter().all(|r| r.gap > 0.0));
        assert!(s.k.invariants().holds());
        assert!(s.energy.e_total <= out.history[0].e_total + 1e-10);
    }

    #[test]
    fn g_zero_k_step_is_zero() {
        let model = harmonic_trap(1, 8.0, 48, 0.0, 1.0 / 6.0, 100).unwrap();
        let (_, s) = zero_iterate(&model).unwrap();
        let k = k_step(&model, &s, 1.0).unwrap();
        assert!(k.frame().iter().all(|z| *z == C64::from(0.0)));
        let (phi, mu) = phi_step(&model, &k, &s.phi, &ConvergenceCriteria::default()).unwrap();
        assert!((phi.frame() - s.phi.frame()).norm() < 1e-12);
        assert!((mu - s.mu).abs() < 1e-12);
    }

    #[test]
    fn phi_step_with_zero_kernel_is_hartree() {
        let model = standard_problem(100).unwrap();
        let (h, s) = zero_iterate(&model).unwrap();
        let (phi, mu) = phi_step(&model, &s.k, &s.phi, &ConvergenceCriteria::default()).unwrap();
        assert!((phi.frame() - h.phi0.frame()).norm() < 1e-9);
        assert!((mu - h.mu0).abs() < 1e-10);
    }

    #[test]
    fn uniform_gas_phi_stays_constant() {
        let model = uniform_gas(1, 10.0, 32, 0.5, 1.0 / 6.0, 100).unwrap();
        let (_, s) = zero_iterate(&model).unwrap();
        let k = k_step(&model, &s, 1.0).unwrap();
        let (phi, mu) = phi_step(&model, &k, &s.phi, &ConvergenceCriteria::default()).unwrap();
        let pv = phi.point_values(&model.grid);
        let c = pv[0].re;
        assert!(pv.iter().all(|z| (z.re - c).abs() < 1e-10));
        assert!(mu != s.mu);
    }

    #[test]
    fn gap_of_noninteracting_zero_iterate() {
        let model = harmonic_trap(1, 10.0, 256, 0.0, 1.0 / 6.0, 100).unwrap();
        let (_, s) = zero_iterate(&model).unwrap();
        let g = monitor_gap(&model, &s).unwrap();
        assert!((g.gap - 2.0).abs() < 1e-2, "{}", g.gap);
    }

    #[test]
    fn criteria_validation() {
        let mut c = ConvergenceCriteria::default();
        assert!(c.validate().is_ok());
        c.damping = 0.0;
        assert_eq!(c.validate().unwrap_err().0, "damping");
    }
}
