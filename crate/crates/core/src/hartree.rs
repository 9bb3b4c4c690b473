//! Hartree functional and the zero-iterate condensate.

use log::{debug, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{CMatrix, CVector, Field, Model, C64};
use crate::linalg::{hermitian_eig, hermitian_part};

#[derive(Clone, Debug, PartialEq)]
pub struct HartreeResult {
    pub phi0: Field,
    pub mu0: f64,
    pub energy: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HartreeOptions {
    /// Linear mixing weight for the new eigenvector.
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for HartreeOptions {
    fn default() -> Self {
        HartreeOptions { alpha: 0.5, max_iter: 2000, tol: 1e-11 }
    }
}

fn weighted_density(phi: &CVector) -> DVector<f64> {
    DVector::from_fn(phi.len(), |i, _| phi[i].norm_sqr())
}

/// `∬|φ|²υ_N|φ|²`.
pub fn quartic_term(model: &Model, phi: &Field) -> f64 {
    let rho = weighted_density(phi.frame());
    rho.dot(&model.interaction.convolve(&rho))
}

/// `-Δ + V + υ_N * |φ|²` in the weighted frame.
pub fn hartree_operator(model: &Model, phi: &CVector) -> CMatrix {
    let direct = model.interaction.convolve(&weighted_density(phi));
    let mut h = model.one_body().clone();
    for i in 0..phi.len() {
        h[(i, i)] += C64::from(direct[i]);
    }
    hermitian_part(&h)
}

/// `E_H[φ] = ⟨φ, (-Δ+V)φ⟩ + ½∬|φ|²υ_N|φ|²`.
pub fn hartree_energy(model: &Model, phi: &Field) -> Result<f64> {
    let f = phi.frame();
    let one = f.dotc(&(model.one_body() * f));
    let value = one.re + 0.5 * quartic_term(model, phi);
    if one.im.abs() > 1e-8 * value.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NonReal { what: "hartree energy", value, imag: one.im });
    }
    Ok(value)
}

/// Lowest eigenpair of a Hermitian matrix, phase-fixed so that the entry of
/// largest modulus is real positive. Fails when the ground state is
/// degenerate to within `1e-12`.
pub(crate) fn ground_state(h: &CMatrix) -> Result<(f64, CVector)> {
    let (vals, vecs) = hermitian_eig(h);
    if vals.len() > 1 && vals[1] - vals[0] < 1e-12 {
        return Err(Error::DegenerateGround(vals[1] - vals[0]));
    }
    let v = vecs.column(0).into_owned();
    let p = (0..v.len()).fold(0, |b, i| if v[i].norm() > v[b].norm() { i } else { b });
    let phase = v[p].conj() / v[p].norm();
    let v = v * phase;
    Ok((vals[0], v.map(|z| C64::from(z.re)) / C64::from(v.map(|z| z.re).norm())))
}

fn residual(h: &CMatrix, phi: &CVector) -> (f64, f64) {
    let hphi = h * phi;
    let mu = phi.dotc(&hphi).re;
    (mu, (hphi - phi * C64::from(mu)).norm())
}

/// Self-consistent field loop for the Hartree equation, starting from the
/// ground state of `-Δ + V`.
pub fn solve_hartree(model: &Model, opts: &HartreeOptions) -> Result<HartreeResult> {
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::Dimension(format!("mixing weight {} outside (0, 1]", opts.alpha)));
    }
    let (_, mut phi) = ground_state(model.one_body())?;
    let mut energy = hartree_energy(model, &Field::from_frame(phi.clone()))?;
    let mut res = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let h = hartree_operator(model, &phi);
        let (mu, r) = residual(&h, &phi);
        res = r;
        debug!("hartree iteration {it}: mu {mu:.12e} residual {r:.3e}");
        if r < opts.tol {
            let phi0 = Field::from_frame(phi);
            let energy = hartree_energy(model, &phi0)?;
            let mu0 = energy + 0.5 * quartic_term(model, &phi0);
            return Ok(HartreeResult { phi0, mu0, energy, iterations: it, residual: r });
        }
        let (_, fresh) = ground_state(&h)?;
        let fresh = if fresh.dotc(&phi).re < 0.0 { -fresh } else { fresh };
        let mixed = &phi * C64::from(1.0 - opts.alpha) + fresh * C64::from(opts.alpha);
        phi = &mixed / C64::from(mixed.norm());
        let next = hartree_energy(model, &Field::from_frame(phi.clone()))?;
        if opts.alpha <= 0.5 && next > energy + 1e-10 {
            warn!("hartree energy increased by {:.3e} at iteration {it}", next - energy);
            return Err(Error::NonConvergence { iterations: it + 1, residual: r });
        }
        energy = next;
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{harmonic_trap, uniform_gas};

    #[test]
    fn noninteracting_ground_state() {
        let model = harmonic_trap(1, 10.0, 256, 0.0, 1.0 / 6.0, 100).unwrap();
        let r = solve_hartree(&model, &HartreeOptions::default()).unwrap();
        assert!((r.mu0 - 1.0).abs() < 2e-3, "{}", r.mu0);
        assert!((r.energy - r.mu0).abs() < 1e-12);
        assert!((r.phi0.norm() - 1.0).abs() < 1e-10);
        assert!(r.phi0.frame().iter().all(|z| z.re >= -1e-12 && z.im == 0.0));
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let model = harmonic_trap(1, 8.0, 32, 0.1, 1.0 / 6.0, 100).unwrap();
        assert_eq!(hartree_energy(&model, &Field::zeros(32)).unwrap(), 0.0);
    }

    #[test]
    fn quartic_term_linear_in_g() {
        let phi = {
            let m = harmonic_trap(1, 8.0, 48, 1.0, 1.0 / 6.0, 100).unwrap();
            m.grid.real_field_from_fn(|x| (-(x[0] - 0.3).powi(2)).exp()).normalized()
        };
        let e = |g: f64| hartree_energy(&harmonic_trap(1, 8.0, 48, g, 1.0 / 6.0, 100).unwrap(), &phi).unwrap();
        let (e0, e1, e2) = (e(0.0), e(1.0), e(2.0));
        assert!(((e2 - e0) - 2.0 * (e1 - e0)).abs() < 1e-12 * e2.abs());
    }

    #[test]
    fn interacting_fixed_point() {
        let model = harmonic_trap(1, 8.0, 64, 0.1, 1.0 / 6.0, 100).unwrap();
        let r = solve_hartree(&model, &HartreeOptions::default()).unwrap();
        assert!(r.residual < 1e-11);
        let q = quartic_term(&model, &r.phi0);
        assert!(((r.mu0 - r.energy) - 0.5 * q).abs() < 1e-8 * q);
        assert!(r.mu0 >= r.energy);
    }

    #[test]
    fn uniform_gas_constant_state() {
        let g = 0.3;
        let model = uniform_gas(1, 10.0, 64, g, 1.0 / 6.0, 100).unwrap();
        let r = solve_hartree(&model, &HartreeOptions::default()).unwrap();
        let expected = 1.0 / 20f64.sqrt();
        let pv = r.phi0.point_values(&model.grid);
        assert!(pv.iter().all(|z| (z.re - expected).abs() < 1e-10));
        assert!((r.mu0 - g / 20.0).abs() < 1e-10, "{}", r.mu0);
    }

    #[test]
    fn first_order_slope_in_g() {
        let base = harmonic_trap(1, 8.0, 64, 0.0, 1.0 / 6.0, 100).unwrap();
        let r0 = solve_hartree(&base, &HartreeOptions::default()).unwrap();
        let unit = harmonic_trap(1, 8.0, 64, 1.0, 1.0 / 6.0, 100).unwrap();
        let slope = quartic_term(&unit, &r0.phi0);
        let g = 0.01;
        let small = harmonic_trap(1, 8.0, 64, g, 1.0 / 6.0, 100).unwrap();
        let r = solve_hartree(&small, &HartreeOptions::default()).unwrap();
        assert!(((r.mu0 - r0.mu0) / g - slope).abs() < 0.05 * slope);
    }
}
