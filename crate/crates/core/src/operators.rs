//! Self-consistent operators `H[φ,k;μ]`, `Θ[φ,k]`, the condensate equation
//! operator and the gap margin.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{CMatrix, CVector, Field, Kernel, Model, C64};
use crate::linalg::{self, complement_basis, hermitian_eigenvalues, hermitian_part, op_norm, symmetric_part};
use crate::pair_kernel::{densities_from_kernel, Densities, PairKernel};

#[derive(Clone, Debug)]
pub struct HTheta {
    /// `H[φ,k;μ]`, including the `-μ` shift.
    pub h: Kernel,
    /// `h + μδ`.
    pub h0: Kernel,
    pub theta: Kernel,
    pub mu_used: f64,
    pub gap_margin: f64,
}

fn direct_term(model: &Model, phi: &CVector) -> DVector<f64> {
    let dens = DVector::from_fn(phi.len(), |i, _| phi[i].norm_sqr());
    model.interaction.convolve(&dens)
}

/// Frame matrices of `H` and `Θ` with the pair self-interaction terms
/// weighted by `pair_weight` (1 for the mean-field operators).
pub(crate) fn assemble_frames(
    model: &Model,
    phi: &CVector,
    dens: &Densities,
    mu: f64,
    pair_weight: f64,
) -> Result<(CMatrix, CMatrix)> {
    let n = model.len();
    let inv_n = pair_weight / model.n();
    let u = &model.interaction;
    let mut h = model.one_body().clone();
    h += u.times(&(phi * phi.adjoint()));
    h += u.times(dens.n_pair.frame()) * C64::from(inv_n);
    let diag = direct_term(model, phi) + u.convolve(&dens.rho_weighted) * inv_n;
    for i in 0..n {
        h[(i, i)] += C64::from(diag[i] - mu);
    }
    let dev = linalg::max_antihermiticity(&h);
    let scale = linalg::max_abs(&h).max(1.0);
    if dev >= 1e-8 * scale {
        return Err(Error::HermiticityBroken(dev));
    }
    let h = hermitian_part(&h);
    let pair = phi * phi.transpose() + dens.m_pair.frame() * C64::from(inv_n);
    let theta = symmetric_part(&u.times(&pair));
    Ok((h, theta))
}

pub fn assemble(model: &Model, phi: &Field, k: &PairKernel, mu: f64) -> Result<HTheta> {
    let dens = densities_from_kernel(k)?;
    assemble_with_densities(model, phi, &dens, mu)
}

pub fn assemble_with_densities(model: &Model, phi: &Field, dens: &Densities, mu: f64) -> Result<HTheta> {
    let (h, theta) = assemble_frames(model, phi.frame(), dens, mu, 1.0)?;
    let gap = gap_margin_frames(&h, &theta, phi.frame());
    let n = h.nrows();
    let h0 = &h + CMatrix::identity(n, n) * C64::from(mu);
    Ok(HTheta {
        h: Kernel::from_frame(h),
        h0: Kernel::from_frame(h0),
        theta: Kernel::from_frame(theta),
        mu_used: mu,
        gap_margin: gap,
    })
}

pub fn assemble_h(model: &Model, phi: &Field, k: &PairKernel, mu: f64) -> Result<Kernel> {
    let dens = densities_from_kernel(k)?;
    Ok(Kernel::from_frame(assemble_frames(model, phi.frame(), &dens, mu, 1.0)?.0))
}

pub fn assemble_theta(model: &Model, phi: &Field, k: &PairKernel) -> Result<Kernel> {
    let dens = densities_from_kernel(k)?;
    Ok(Kernel::from_frame(assemble_frames(model, phi.frame(), &dens, 0.0, 1.0)?.1))
}

/// Largest `c` with `H(e,ē) - |Θ(ē,ē)| ≥ c‖e‖²` on `(φ)_⊥`.
///
/// Exact for real symmetric input; for complex input the conservative bound
/// `λ_min(QhQ) - ‖QθQ‖_op` is returned. A zero `phi` means no constraint.
pub fn gap_margin(h: &Kernel, theta: &Kernel, phi: &Field) -> f64 {
    gap_margin_frames(h.frame(), theta.frame(), phi.frame())
}

pub(crate) fn gap_margin_frames(h: &CMatrix, theta: &CMatrix, phi: &CVector) -> f64 {
    let b = complement_basis(phi);
    let real = linalg::max_imag(h) == 0.0 && linalg::max_imag(theta) == 0.0 && phi.iter().all(|z| z.im == 0.0);
    let hr = hermitian_part(&(b.adjoint() * h * &b));
    if real {
        let tr = b.adjoint() * theta * &b;
        let minus = hermitian_eigenvalues(&hermitian_part(&(&hr - &tr))).min();
        let plus = hermitian_eigenvalues(&hermitian_part(&(&hr + &tr))).min();
        minus.min(plus)
    } else {
        let tr = b.transpose() * theta * &b;
        hermitian_eigenvalues(&hr).min() - op_norm(&tr)
    }
}

/// The condensate equation `L φ + A φ̄ = μ φ` split into its linear part `L`
/// and the anomalous part `A = (1/N) υ_N m`.
#[derive(Clone, Debug)]
pub struct PhiOperator {
    pub linear: CMatrix,
    pub anomalous: CMatrix,
}

impl PhiOperator {
    pub fn new(model: &Model, phi: &CVector, dens: &Densities) -> Self {
        let inv_n = 1.0 / model.n();
        let u = &model.interaction;
        let mut linear = model.one_body().clone();
        linear += u.times(dens.n_pair.frame()) * C64::from(inv_n);
        let diag = direct_term(model, phi) + u.convolve(&dens.rho_weighted) * inv_n;
        for i in 0..phi.len() {
            linear[(i, i)] += C64::from(diag[i]);
        }
        let anomalous = u.times(dens.m_pair.frame()) * C64::from(inv_n);
        PhiOperator { linear: hermitian_part(&linear), anomalous: symmetric_part(&anomalous) }
    }

    pub fn apply(&self, phi: &CVector) -> CVector {
        &self.linear * phi + &self.anomalous * phi.map(|z| z.conj())
    }

    /// Effective Hermitian operator on real fields, `L + A` (real mode).
    pub fn real_mode(&self) -> CMatrix {
        hermitian_part(&(&self.linear + &self.anomalous))
    }

    /// `⟨φ, Lφ + Aφ̄⟩`.
    pub fn rayleigh(&self, phi: &CVector) -> f64 {
        (phi.dotc(&self.apply(phi)) / C64::from(phi.norm_squared())).re
    }
}

/// `‖Lφ + Aφ̄ - μφ‖`.
pub fn phi_residual(model: &Model, phi: &Field, k: &PairKernel, mu: f64) -> Result<f64> {
    let dens = densities_from_kernel(k)?;
    let op = PhiOperator::new(model, phi.frame(), &dens);
    Ok((op.apply(phi.frame()) - phi.frame() * C64::from(mu)).norm())
}
