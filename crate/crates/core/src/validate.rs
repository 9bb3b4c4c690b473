//! The `validate` suite: every oracle case compared against the solver, plus
//! the structural invariants checked on converged runs.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bdg::{kernel_from_bdg, scalar_mode_root, solve_bdg, verify_density_expansion, verify_similarity};
use crate::energy::{gradient_check, psi_form_energy, total_energy, trace_energy, Directions, Functional, GradientPoint};
use crate::error::Result;
use crate::grid::{CMatrix, Field, Kernel, Model, C64};
use crate::operators::assemble;
use crate::oracle::{
    brute_force_block_diag, oscillator_ground, perturbative_mu, real_part, uniform_gas_spectrum, Expected, OracleCase,
    OracleCheck, Provenance, UniformGas,
};
use crate::linalg::op_norm;
use crate::pair_kernel::{project_frame, psi_transform, PairKernel};
use crate::presets::{harmonic_trap, standard_problem, uniform_gas};
use crate::scf::{solve_coupled, zero_iterate, Backend, ConvergenceCriteria, HistoryRow, SolveOutcome, SolverState};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl InvariantCheck {
    /// Passes when `value <= bound` (and `value` is not NaN).
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        InvariantCheck { name: name.into(), value, bound, passed: value <= bound }
    }

    /// Passes when `value > bound`.
    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        InvariantCheck { name: name.into(), value, bound, passed: value > bound }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub oracle: Vec<OracleCheck>,
    pub invariants: Vec<InvariantCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.oracle.iter().all(|c| c.passed) && self.invariants.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .oracle
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}/{}: expected {:e}, got {:e} (tol {:e})", c.case, c.quantity, c.expected, c.actual, c.tol))
            .collect();
        out.extend(
            self.invariants
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{}: value {:e}, bound {:e}", c.name, c.value, c.bound)),
        );
        out
    }

    pub fn invariants_csv(&self) -> String {
        let mut out = String::from("name,value,bound,passed\n");
        for c in &self.invariants {
            out.push_str(&format!("{},{:.16e},{:.16e},{}\n", c.name, c.value, c.bound, c.passed));
        }
        out
    }
}

fn quiet_solve(model: &Model, backend: Backend) -> std::result::Result<SolveOutcome, crate::scf::SolveError> {
    let mut hook = |_: &SolverState, _: &[HistoryRow]| Ok(());
    solve_coupled(model, &ConvergenceCriteria::default(), backend, None, &mut hook)
}

fn solved(model: &Model, backend: Backend) -> Result<SolveOutcome> {
    quiet_solve(model, backend).map_err(|e| e.error)
}

fn case(name: &str, provenance: Provenance, inputs: &[(&str, f64)], expected: Vec<Expected>) -> OracleCase {
    OracleCase {
        name: name.into(),
        inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        expected,
        provenance,
    }
}

fn expect(name: &str, value: f64, tol: f64) -> Expected {
    Expected { name: name.into(), value, tol }
}

fn compare(case: &OracleCase, actual: &[f64]) -> Vec<OracleCheck> {
    case.expected.iter().zip(actual).map(|(e, a)| OracleCheck::new(case, e, *a)).collect()
}

/// Non-interacting oscillator: μ = 1 (continuum), k ≡ 0, one outer iterate.
pub fn oscillator_case() -> Result<Vec<OracleCheck>> {
    let model = harmonic_trap(1, 10.0, 256, 0.0, 1.0 / 6.0, 100)?;
    let (ho, energy) = oscillator_ground(&model.grid);
    let c = case(
        "oscillator_g0",
        Provenance::Analytic,
        &[("dim", 1.0), ("extent", 10.0), ("points", 256.0), ("g", 0.0)],
        vec![
            expect("mu", energy, 2e-3),
            expect("k_hs", 0.0, 1e-10),
            expect("iterate", 1.0, 0.0),
            expect("overlap", 1.0, 1e-4),
            expect("oracle_norm", 1.0, 1e-6),
        ],
    );
    let out = solved(&model, Backend::Iterative)?;
    let overlap = out.state.phi.inner(&ho.normalized()).norm();
    Ok(compare(
        &c,
        &[out.state.mu, out.state.k.hs_norm(), out.state.iterate_index as f64, overlap, ho.norm()],
    ))
}

/// `(h, θ) = (5, 3)`: Riccati root, BdG 2×2 and trace formula against the
/// brute-force diagonalizer.
pub fn scalar_mode_case() -> Result<Vec<OracleCheck>> {
    let bf = brute_force_block_diag(&DMatrix::from_element(1, 1, 5.0), &DMatrix::from_element(1, 1, 3.0), None)?;
    let c = case(
        "scalar_mode_5_3",
        Provenance::BruteForce,
        &[("h", 5.0), ("theta", 3.0)],
        vec![
            expect("k_riccati_root", bf.k[(0, 0)], 1e-12),
            expect("k_bdg", bf.k[(0, 0)], 1e-12),
            expect("energy_bdg", bf.spectrum[0], 1e-12),
            expect("trace_energy", bf.energy, 1e-12),
        ],
    );
    let one = |x: f64| Kernel::from_frame(CMatrix::from_element(1, 1, C64::from(x)));
    let none = Field::zeros(1);
    let root = scalar_mode_root(5.0, C64::from(3.0))?;
    let sol = solve_bdg(&one(5.0), &one(3.0), &none)?;
    let k = kernel_from_bdg(&sol, &none)?;
    let e = trace_energy(&k, &one(5.0), &one(3.0))?;
    Ok(compare(&c, &[root.re, k.frame()[(0, 0)].re, sol.energies[0], e]))
}

fn gas_parameters(model: &Model) -> UniformGas {
    let p = &model.potentials;
    UniformGas {
        g: p.g,
        extent: model.grid.extent(),
        dim: model.grid.dim(),
        n_particles: p.n(),
        beta: p.beta,
        profile: p.profile.clone(),
    }
}

/// Uniform gas at the zero iterate: every BdG energy against the lattice
/// Bogoliubov dispersion, and the brute-force spectrum of the same operators
/// against it. Both relative `1e-6`: the sampled interaction's discrete
/// transform departs from `υ̂` by ~1e-8 relative at the top modes.
pub fn uniform_gas_case(g: f64) -> Result<Vec<OracleCheck>> {
    let model = uniform_gas(1, 10.0, 64, g, 1.0 / 6.0, 100)?;
    let exact = uniform_gas_spectrum(&model.grid, &gas_parameters(&model))?;
    let (_, state) = zero_iterate(&model)?;
    let ops = assemble(&model, &state.phi, &state.k, state.mu)?;
    let sol = solve_bdg(&ops.h, &ops.theta, &state.phi)?;
    let phi = real_part(&DMatrix::from_column_slice(model.len(), 1, state.phi.frame().as_slice()))?;
    let phi = DVector::from_column_slice(phi.as_slice());
    let bf = brute_force_block_diag(&real_part(ops.h.frame())?, &real_part(ops.theta.frame())?, Some(&phi))?;
    let c = |name: &str, rel: f64| {
        case(
            name,
            Provenance::Analytic,
            &[("g", g), ("extent", 10.0), ("points", 64.0)],
            exact.iter().enumerate().map(|(j, e)| expect(&format!("E_{j}"), *e, rel * e)).collect(),
        )
    };
    let mut out = compare(&c("uniform_gas_bdg", 1e-6), &sol.energies);
    out.extend(compare(&c("uniform_gas_brute_force", 1e-6), &bf.spectrum));
    if sol.energies.len() != exact.len() || bf.spectrum.len() != exact.len() {
        let miss = case("uniform_gas_mode_count", Provenance::Analytic, &[], vec![expect("modes", exact.len() as f64, 0.0)]);
        out.extend(compare(&miss, &[sol.energies.len().min(bf.spectrum.len()) as f64]));
    }
    Ok(out)
}

/// Random real `(h, θ)` with a gap, on the complement of a random `φ`:
/// kernel, spectrum and ground-state energy of the main path against the
/// brute-force diagonalizer.
pub fn random_brute_force_case(seed: u64, n: usize) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 2.0;
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let t = (&b + b.transpose()) * (0.5 / n as f64);
    let v = DVector::from_fn(n, |_, _| rng.gen_range(0.1..1.0));
    let v = &v / v.norm();
    let bf = brute_force_block_diag(&h, &t, Some(&v))?;

    let cplx = |m: &DMatrix<f64>| Kernel::from_frame(m.map(C64::from));
    let phi = Field::from_frame(v.map(C64::from));
    let sol = solve_bdg(&cplx(&h), &cplx(&t), &phi)?;
    let k = kernel_from_bdg(&sol, &phi)?;
    let k_err = (k.frame().map(|z| z.re) - &bf.k).abs().max();
    let s_err = sol.energies.iter().zip(&bf.spectrum).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let e = trace_energy(&k, &cplx(&h), &cplx(&t))?;
    let c = case(
        &format!("random_brute_force_{seed}"),
        Provenance::BruteForce,
        &[("seed", seed as f64), ("n", n as f64)],
        vec![
            expect("k_max_abs_diff", 0.0, 1e-9),
            expect("spectrum_max_abs_diff", 0.0, 1e-9),
            expect("trace_energy", bf.energy, 1e-9),
            expect("block_leakage", 0.0, 1e-9),
        ],
    );
    let count_ok = sol.energies.len() == bf.spectrum.len();
    Ok(compare(&c, &[k_err, if count_ok { s_err } else { f64::INFINITY }, e, bf.leakage]))
}

/// First-order perturbation theory around `g = 0` on the standard geometry.
pub fn perturbative_case() -> Result<Vec<OracleCheck>> {
    let g = 0.01;
    let base = harmonic_trap(1, 8.0, 64, 0.0, 1.0 / 6.0, 100)?;
    let pert = perturbative_mu(g, &base)?;
    let c = case(
        "perturbative_mu",
        Provenance::Perturbative,
        &[("g", g), ("extent", 8.0), ("points", 64.0), ("n_particles", 100.0)],
        vec![expect("mu_g0", pert.mu_zero, 1e-10), expect("mu_first_order", pert.value, 0.05 * g * pert.slope)],
    );
    let mu0 = solved(&base, Backend::Iterative)?.state.mu;
    let mu = solved(&harmonic_trap(1, 8.0, 64, g, 1.0 / 6.0, 100)?, Backend::Iterative)?.state.mu;
    Ok(compare(&c, &[mu0, mu]))
}

pub fn run_oracle_suite(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut out = oscillator_case()?;
    out.extend(scalar_mode_case()?);
    out.extend(uniform_gas_case(0.3)?);
    for s in 0..3 {
        out.extend(random_brute_force_case(seed.wrapping_add(s), 12)?);
    }
    out.extend(perturbative_case()?);
    Ok(out)
}

/// Residual, Bogoliubov-structure and gap checks on one converged run.
pub fn converged_run_invariants(label: &str, model: &Model, out: &SolveOutcome) -> Result<Vec<InvariantCheck>> {
    let s = &out.state;
    let ops = assemble(model, &s.phi, &s.k, s.mu)?;
    let sol = solve_bdg(&ops.h, &ops.theta, &s.phi)?;
    let sim = verify_similarity(&s.k, &ops.h, &ops.theta, &sol)?;
    let dens = verify_density_expansion(&s.k, &sol)?;
    let psi = psi_transform(&s.k)?;
    let tilde = psi_form_energy(model, &s.phi, &psi)? / model.n();
    let min_gap = out.history.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    let e = s.energy.e_total;
    Ok(vec![
        InvariantCheck::at_most(format!("{label}/riccati_resid"), s.riccati_resid, 1e-8),
        InvariantCheck::at_most(format!("{label}/phi_resid"), s.phi_resid, 1e-8),
        InvariantCheck::at_most(format!("{label}/similarity_leakage"), sim.leakage, 1e-7 * sim.m_norm),
        InvariantCheck::at_most(format!("{label}/similarity_blocks"), sim.block_error, 1e-7 * sim.m_norm),
        InvariantCheck::at_most(format!("{label}/similarity_spectrum"), sim.spectrum_error, 1e-7),
        InvariantCheck::at_most(format!("{label}/similarity_modes"), sim.mode_error, 1e-7),
        InvariantCheck::at_most(format!("{label}/symplectic_norms"), sol.symplectic_defect(), 1e-8),
        InvariantCheck::at_most(format!("{label}/density_n_pair"), dens.n_error, 1e-7),
        InvariantCheck::at_most(
            format!("{label}/density_m_pair"),
            dens.m_error_minus.min(dens.m_error_plus),
            1e-7,
        ),
        InvariantCheck::at_most(format!("{label}/energy_forms"), (tilde - e).abs() / e.abs().max(1e-300), 1e-8),
        InvariantCheck::above(format!("{label}/min_gap"), min_gap, 0.0),
    ])
}

/// Symmetric part of `raw` on `(φ)_⊥`, rescaled to operator norm `target`.
fn scaled_kernel(raw: &CMatrix, phi: &Field, target: f64) -> Result<PairKernel> {
    let k = project_frame(raw, phi);
    let norm = op_norm(&k);
    PairKernel::from_parts(Kernel::from_frame(k * C64::from(target / norm)), phi)
}

/// `total_energy` against `psi_form_energy` at random admissible points.
pub fn energy_form_invariants(seed: u64, count: usize) -> Result<Vec<InvariantCheck>> {
    let model = standard_problem(100)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let c = rng.gen_range(-0.5..0.5);
        let w = rng.gen_range(0.7..1.5);
        let phi = model.grid.real_field_from_fn(|x| (-(x[0] - c).powi(2) / w).exp()).normalized();
        let n = model.len();
        let raw = CMatrix::from_fn(n, n, |_, _| C64::from(rng.gen_range(-1.0..1.0)));
        let k = scaled_kernel(&raw, &phi, rng.gen_range(0.05..0.9))?;
        let e = total_energy(&model, &phi, &k)?.e_total;
        let tilde = psi_form_energy(&model, &phi, &psi_transform(&k)?)? / model.n();
        worst = worst.max((tilde - e).abs() / e.abs().max(1e-300));
    }
    Ok(vec![InvariantCheck::at_most(format!("energy_forms_random_{count}"), worst, 1e-8)])
}

/// Finite-difference checks of all four functionals, `count` directions each.
pub fn gradient_invariants(seed: u64, count: usize) -> Result<Vec<InvariantCheck>> {
    let model = standard_problem(100)?;
    let out = solved(&model, Backend::Iterative)?;
    let phi = out.state.phi.frame().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.len();
    let raw = CMatrix::from_fn(n, n, |_, _| C64::from(rng.gen_range(-1.0..1.0)));
    let k = scaled_kernel(&raw, &out.state.phi, 0.3)?;
    let psi = psi_transform(&k)?.into_frame();
    let mut checks = Vec::new();
    for (i, f) in Functional::ALL.into_iter().enumerate() {
        let kernel = if f == Functional::PsiForm { psi.clone() } else { k.frame().clone() };
        let point = GradientPoint { phi: phi.clone(), kernel };
        let rep = gradient_check(f, &model, &point, Directions::Both, count, seed.wrapping_add(i as u64))?;
        checks.push(InvariantCheck::at_most(format!("gradient_{}", f.as_str()), rep.max_error, 1e-6));
    }
    Ok(checks)
}

pub fn run_invariant_suite(seed: u64) -> Result<Vec<InvariantCheck>> {
    let model = standard_problem(100)?;
    let it = solved(&model, Backend::Iterative)?;
    let direct = solved(&model, Backend::Direct)?;
    let mut out = converged_run_invariants("standard_iterative", &model, &it)?;
    out.extend(converged_run_invariants("standard_direct", &model, &direct)?);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    out.push(InvariantCheck::at_most("backends/mu", rel(it.state.mu, direct.state.mu), 1e-6));
    out.push(InvariantCheck::at_most(
        "backends/e_total",
        rel(it.state.energy.e_total, direct.state.energy.e_total),
        1e-6,
    ));
    out.push(InvariantCheck::at_most("backends/k_hs", rel(it.state.k.hs_norm(), direct.state.k.hs_norm()), 1e-6));
    out.extend(energy_form_invariants(seed, 30)?);
    out.extend(gradient_invariants(seed, 20)?);
    Ok(out)
}

pub fn run_validation(seed: u64) -> Result<ValidationReport> {
    Ok(ValidationReport { oracle: run_oracle_suite(seed)?, invariants: run_invariant_suite(seed)? })
}
