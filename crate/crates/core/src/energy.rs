//! Energy functionals, the chemical potential and their first variations.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{kinetic_frame, CMatrix, CVector, Field, Kernel, Model, C64};
use crate::hartree::{hartree_energy, hartree_operator, quartic_term};
use crate::linalg::{self, hermitian_eig, hermitian_fn, hermitian_part, spectral_derivative, symmetric_part};
use crate::operators::{assemble_frames, PhiOperator};
use crate::pair_kernel::{densities_from_frame, project_frame, psi_from_frame, resolvent_frame, Densities, PairKernel};

/// Weight of the pair self-interaction inside the energy operators: the
/// pair-pair terms enter the energy with half the weight they carry in the
/// mean-field operators `H[φ,k]`, `Θ[φ,k]`.
pub const ENERGY_PAIR_WEIGHT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_hartree: f64,
    /// `𝓔[k; H₀ᴱ, Θᴱ]` with the energy operators.
    pub e_pair_trace: f64,
    pub e_total: f64,
    pub mu: f64,
    /// `𝓔̃[φ,ψ]/N` at `ψ = k(δ - k̄k)^{-1/2}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_form_value: Option<f64>,
    pub breakdown: BTreeMap<String, f64>,
}

fn conj(m: &CMatrix) -> CMatrix {
    m.map(|z| z.conj())
}

fn check_real(what: &'static str, z: C64) -> Result<f64> {
    if z.im.abs() > 1e-8 * z.re.abs() + 1e-13 {
        return Err(Error::NonReal { what, value: z.re, imag: z.im });
    }
    Ok(z.re)
}

pub(crate) fn trace_energy_frames(k: &CMatrix, h0: &CMatrix, theta: &CMatrix) -> Result<f64> {
    let rbar = conj(&resolvent_frame(k)?);
    let kb = conj(k);
    let inner = &kb * h0 * k + (&kb * theta + conj(theta) * k) * C64::from(0.5);
    check_real("pair trace energy", (rbar * inner).trace())
}

/// `tr{(δ - k̄k)^{-1}(k̄H₀k + ½k̄Θ + ½Θ̄k)}`.
pub fn trace_energy(k: &PairKernel, h0: &Kernel, theta: &Kernel) -> Result<f64> {
    trace_energy_frames(k.frame(), h0.frame(), theta.frame())
}

struct Parts {
    e_hartree: f64,
    e_pair: f64,
    e_pair_meanfield: f64,
    depletion: f64,
}

fn energy_parts(model: &Model, phi: &CVector, k: &CMatrix) -> Result<Parts> {
    let dens = densities_from_frame(k)?;
    let (h0, theta) = assemble_frames(model, phi, &dens, 0.0, ENERGY_PAIR_WEIGHT)?;
    let (h0_mf, theta_mf) = assemble_frames(model, phi, &dens, 0.0, 1.0)?;
    Ok(Parts {
        e_hartree: hartree_energy(model, &Field::from_frame(phi.clone()))?,
        e_pair: trace_energy_frames(k, &h0, &theta)?,
        e_pair_meanfield: trace_energy_frames(k, &h0_mf, &theta_mf)?,
        depletion: dens.depletion(),
    })
}

/// `E_H[φ] + (1/N)𝓔[k; H₀ᴱ, Θᴱ]` on raw frames (no admissibility checks
/// beyond `‖k‖ < 1`).
pub(crate) fn total_energy_frames(model: &Model, phi: &CVector, k: &CMatrix) -> Result<f64> {
    let p = energy_parts(model, phi, k)?;
    Ok(p.e_hartree + p.e_pair / model.n())
}

pub fn total_energy(model: &Model, phi: &Field, k: &PairKernel) -> Result<EnergyReport> {
    let parts = energy_parts(model, phi.frame(), k.frame())?;
    let n = model.n();
    let quartic = quartic_term(model, phi);
    let psi = Kernel::from_frame(psi_from_frame(k.frame())?);
    let lines = psi_form_lines(model, phi, &psi)?;
    let psi_total: f64 = lines.iter().sum();
    let mut breakdown = BTreeMap::new();
    breakdown.insert("one_body".to_string(), parts.e_hartree - 0.5 * quartic);
    breakdown.insert("hartree_interaction".to_string(), 0.5 * quartic);
    breakdown.insert("pair_trace".to_string(), parts.e_pair);
    breakdown.insert("pair_trace_meanfield".to_string(), parts.e_pair_meanfield);
    breakdown.insert("total_meanfield".to_string(), parts.e_hartree + parts.e_pair_meanfield / n);
    breakdown.insert("depletion".to_string(), parts.depletion);
    breakdown.insert("psi_form_scaled".to_string(), psi_total);
    breakdown.insert("psi_form_per_particle".to_string(), psi_total / n);
    for (i, line) in lines.iter().enumerate() {
        breakdown.insert(format!("psi_form_line{}", i + 1), *line);
    }
    Ok(EnergyReport {
        e_hartree: parts.e_hartree,
        e_pair_trace: parts.e_pair,
        e_total: parts.e_hartree + parts.e_pair / n,
        mu: chemical_potential(model, phi, k)?,
        psi_form_value: Some(psi_total / n),
        breakdown,
    })
}

/// μ from the condensate equation integrated against `φ̄`, evaluated by
/// point-value quadrature.
pub fn chemical_potential(model: &Model, phi: &Field, k: &PairKernel) -> Result<f64> {
    let grid = &model.grid;
    let dens = densities_from_frame(k.frame())?;
    let w = grid.weights();
    let u = model.interaction.values();
    let f = phi.point_values(grid);
    let n_pv = dens.n_pair.point_values(grid);
    let m_pv = dens.m_pair.point_values(grid);
    let len = f.len();
    let kin = kinetic_frame(grid).map(C64::from);
    let mut one = phi.frame().dotc(&(kin * phi.frame()));
    for i in 0..len {
        one += w[i] * model.potentials.v_trap[i] * f[i].norm_sqr();
    }
    let (mut quartic, mut t2, mut t3, mut t4) = (0.0, C64::from(0.0), C64::from(0.0), C64::from(0.0));
    for i in 0..len {
        for j in 0..len {
            let ww = w[i] * w[j] * u[(i, j)];
            if ww == 0.0 {
                continue;
            }
            quartic += ww * f[i].norm_sqr() * f[j].norm_sqr();
            t2 += n_pv[(j, j)] * ww * f[i].norm_sqr();
            t3 += n_pv[(i, j)] * ww * f[i].conj() * f[j];
            t4 += m_pv[(i, j)] * ww * f[i].conj() * f[j].conj();
        }
    }
    let total = one + quartic + (t2 + t3 + t4) / model.n();
    check_real("chemical potential", total)
}

/// The six lines of `𝓔̃[φ,ψ]` (overall factor `N` on the condensate terms),
/// for a symmetric `ψ`.
pub fn psi_form_lines(model: &Model, phi: &Field, psi: &Kernel) -> Result<[f64; 6]> {
    let n = model.n();
    let f = phi.frame();
    let p = psi.frame();
    let len = f.len();
    let u = model.interaction.values();
    let h1 = model.one_body();
    let pc = conj(p);
    let nn = &pc * p;
    let pp = p * &pc;
    let m = p * hermitian_fn(&hermitian_part(&nn), |x| (1.0 + x.max(0.0)).sqrt());
    let line1 = f.dotc(&(h1 * f)) * n;
    let line3 = ((p.adjoint() * h1 * p).trace() + (p.adjoint() * p * h1.transpose()).trace()) * 0.5;
    let (mut line2, mut line4, mut line5, mut line6) = (0.0, C64::from(0.0), C64::from(0.0), C64::from(0.0));
    for i in 0..len {
        for j in 0..len {
            let uij = u[(i, j)];
            if uij == 0.0 {
                continue;
            }
            line2 += uij * (f[i] * f[j] + m[(i, j)] / n).norm_sqr();
            line4 += (f[i] * f[j].conj() * pp[(i, j)] + f[i].conj() * f[j] * nn[(i, j)]) * uij;
            line5 += (nn[(j, j)] * f[i].norm_sqr() + nn[(i, i)] * f[j].norm_sqr()) * uij;
            line6 += (C64::from(nn[(i, j)].norm_sqr()) + nn[(i, i)] * nn[(j, j)]) * uij;
        }
    }
    Ok([
        check_real("psi-form line 1", line1)?,
        0.5 * n * line2,
        check_real("psi-form line 3", line3)?,
        check_real("psi-form line 4", line4 * 0.5)?,
        check_real("psi-form line 5", line5 * 0.5)?,
        check_real("psi-form line 6", line6 / (2.0 * n))?,
    ])
}

/// `𝓔̃[φ,ψ]`; equals `N·𝓔_tot[φ,k]` at `ψ = k(δ - k̄k)^{-1/2}`.
pub fn psi_form_energy(model: &Model, phi: &Field, psi: &Kernel) -> Result<f64> {
    Ok(psi_form_lines(model, phi, psi)?.iter().sum())
}

fn riccati(h: &CMatrix, k: &CMatrix, theta: &CMatrix) -> CMatrix {
    h * k + k * h.transpose() + theta + k * conj(theta) * k
}

/// Real-mode gradient of `𝓔[k; H₀, Θ]` in `k` at fixed operators:
/// `R (H₀k + kH₀ + Θ + kΘk) R` with `R = (δ - k²)^{-1}`.
pub(crate) fn trace_gradient_frames(k: &CMatrix, h0: &CMatrix, theta: &CMatrix) -> Result<CMatrix> {
    let r = resolvent_frame(k)?;
    Ok(symmetric_part(&(&r * riccati(h0, k, theta) * &r)))
}

/// Real-mode gradient of `E_H + (1/N)𝓔[k; H₀ᴱ, Θᴱ]`: `(2(L+A)φ, (1/N) R Ric R)`
/// where the Riccati map uses the mean-field operators at `μ = 0`.
pub(crate) fn total_gradient_frames(model: &Model, phi: &CVector, k: &CMatrix) -> Result<(CVector, CMatrix)> {
    let dens = densities_from_frame(k)?;
    let op = PhiOperator::new(model, phi, &dens);
    let g_phi = op.real_mode() * phi * C64::from(2.0);
    let (h0, theta) = assemble_frames(model, phi, &dens, 0.0, 1.0)?;
    let g_k = trace_gradient_frames(k, &h0, &theta)? / C64::from(model.n());
    Ok((g_phi, g_k))
}

/// Densities expressed through `ψ`: `n = ψ̄ψ`, `m = ψ(δ + ψ̄ψ)^{1/2}`.
pub(crate) fn densities_from_psi(psi: &CMatrix) -> Densities {
    let nn = hermitian_part(&(conj(psi) * psi));
    let m = symmetric_part(&(psi * hermitian_fn(&nn, |x| (1.0 + x.max(0.0)).sqrt())));
    let rho = DVector::from_fn(psi.nrows(), |i, _| nn[(i, i)].re);
    Densities { rho_weighted: rho, n_pair: Kernel::from_frame(nn), m_pair: Kernel::from_frame(m) }
}

/// Real-mode gradient of `𝓔̃[φ,ψ]` for real symmetric `ψ`:
/// `(2N(L+A)φ, Dg(ψ)[Θ] + H₀ψ + ψH₀)` with `g(λ) = λ√(1+λ²)` and the
/// mean-field operators built from the `ψ` densities.
pub(crate) fn psi_form_gradient_frames(model: &Model, phi: &CVector, psi: &CMatrix) -> Result<(CVector, CMatrix)> {
    let dens = densities_from_psi(psi);
    let op = PhiOperator::new(model, phi, &dens);
    let g_phi = op.real_mode() * phi * C64::from(2.0 * model.n());
    let (h0, theta) = assemble_frames(model, phi, &dens, 0.0, 1.0)?;
    let (vals, vecs) = hermitian_eig(&symmetric_part(psi));
    let g = |x: f64| x * (1.0 + x * x).sqrt();
    let dg = |x: f64| (1.0 + 2.0 * x * x) / (1.0 + x * x).sqrt();
    let g_psi = spectral_derivative(&vals, &vecs, g, dg, &theta) + &h0 * psi + psi * &h0;
    Ok((g_phi, symmetric_part(&g_psi)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Hartree,
    Trace,
    Total,
    PsiForm,
}

impl Functional {
    pub const ALL: [Functional; 4] = [Functional::Hartree, Functional::Trace, Functional::Total, Functional::PsiForm];

    pub fn as_str(self) -> &'static str {
        match self {
            Functional::Hartree => "hartree",
            Functional::Trace => "trace",
            Functional::Total => "total",
            Functional::PsiForm => "psi_form",
        }
    }
}

/// Evaluation point for [`gradient_check`]. For `PsiForm` the kernel slot
/// holds `ψ`; for the others it holds `k`. Fields must be real.
#[derive(Clone, Debug)]
pub struct GradientPoint {
    pub phi: CVector,
    pub kernel: CMatrix,
}

/// Which variables the random directions move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Directions {
    Field,
    Kernel,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub functional: Functional,
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub passed: bool,
}

pub const GRADIENT_TOL: f64 = 1e-6;

fn random_real_field(n: usize, rng: &mut ChaCha8Rng) -> CVector {
    let v = CVector::from_fn(n, |_, _| C64::from(rng.gen_range(-1.0..1.0)));
    &v / C64::from(v.norm())
}

fn random_sym(n: usize, rng: &mut ChaCha8Rng, phi: &CVector) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| C64::from(rng.gen_range(-1.0..1.0)));
    let s = project_frame(&a, &Field::from_frame(phi.clone()));
    let nrm = s.norm();
    s / C64::from(nrm)
}

/// Compares the analytic first variation used by the solvers with central
/// finite differences (step `1e-5`, Richardson and `1e-6` fallbacks) along
/// `count` random directions.
pub fn gradient_check(
    functional: Functional,
    model: &Model,
    point: &GradientPoint,
    directions: Directions,
    count: usize,
    seed: u64,
) -> Result<GradientReport> {
    if linalg::max_imag(&point.kernel) > 0.0 || point.phi.iter().any(|z| z.im != 0.0) {
        return Err(Error::NotRealField("gradient_check"));
    }
    let phi0 = point.phi.clone();
    let k0 = point.kernel.clone();
    let fixed = {
        let dens = densities_from_frame(&k0)?;
        assemble_frames(model, &phi0, &dens, 0.0, 1.0)?
    };
    let eval = |phi: &CVector, k: &CMatrix| -> Result<f64> {
        match functional {
            Functional::Hartree => hartree_energy(model, &Field::from_frame(phi.clone())),
            Functional::Trace => trace_energy_frames(k, &fixed.0, &fixed.1),
            Functional::Total => total_energy_frames(model, phi, k),
            Functional::PsiForm => psi_form_energy(model, &Field::from_frame(phi.clone()), &Kernel::from_frame(k.clone())),
        }
    };
    let (g_phi, g_k) = match functional {
        Functional::Hartree => {
            (hartree_operator(model, &phi0) * &phi0 * C64::from(2.0), CMatrix::zeros(k0.nrows(), k0.ncols()))
        }
        Functional::Trace => (CVector::zeros(phi0.len()), trace_gradient_frames(&k0, &fixed.0, &fixed.1)?),
        Functional::Total => total_gradient_frames(model, &phi0, &k0)?,
        Functional::PsiForm => psi_form_gradient_frames(model, &phi0, &k0)?,
    };
    let (move_phi, move_k) = match (functional, directions) {
        (Functional::Hartree, _) => (true, false),
        (Functional::Trace, _) => (false, true),
        (_, Directions::Field) => (true, false),
        (_, Directions::Kernel) => (false, true),
        (_, Directions::Both) => (true, true),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = phi0.len();
    let mut errors = Vec::with_capacity(count);
    for _ in 0..count {
        let dphi = if move_phi { random_real_field(n, &mut rng) } else { CVector::zeros(n) };
        let dk = if move_k { random_sym(n, &mut rng, &phi0) } else { CMatrix::zeros(n, n) };
        let analytic = g_phi.dot(&dphi).re + (&g_k * &dk).trace().re;
        let central = |h: f64| -> Result<f64> {
            let plus = eval(&(&phi0 + &dphi * C64::from(h)), &(&k0 + &dk * C64::from(h)))?;
            let minus = eval(&(&phi0 - &dphi * C64::from(h)), &(&k0 - &dk * C64::from(h)))?;
            Ok((plus - minus) / (2.0 * h))
        };
        let rel = |fd: f64| (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        let d1 = central(1e-5)?;
        let mut err = rel(d1);
        if err >= GRADIENT_TOL {
            let d2 = central(5e-6)?;
            err = err.min(rel((4.0 * d2 - d1) / 3.0)).min(rel(central(1e-6)?));
        }
        errors.push(err);
    }
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradientReport { functional, errors, max_error, passed: max_error < GRADIENT_TOL })
}
