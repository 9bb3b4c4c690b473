//! Pair-excitation kernels: projection onto the off-condensate space,
//! resolvents, the ψ change of variables and the non-condensate densities.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{CMatrix, Field, Grid, Kernel};
use crate::linalg::{self, hermitian_fn, hermitian_part, hpd_inverse, op_norm, symmetric_part};

/// A symmetric kernel with `‖k‖_op < 1`, orthogonal to its condensate.
#[derive(Clone, Debug, PartialEq)]
pub struct PairKernel {
    values: Kernel,
    op_norm: f64,
    attached_phi: Field,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelInvariants {
    pub asymmetry: f64,
    pub left_overlap: f64,
    pub right_overlap: f64,
    pub op_norm: f64,
}

impl KernelInvariants {
    pub fn holds(&self) -> bool {
        self.asymmetry < 1e-10 && self.left_overlap < 1e-8 && self.right_overlap < 1e-8 && self.op_norm < 1.0
    }
}

impl PairKernel {
    pub fn zero(phi: &Field) -> Self {
        PairKernel { values: Kernel::zeros(phi.len()), op_norm: 0.0, attached_phi: phi.clone() }
    }

    /// Wraps a kernel already known to be symmetric and orthogonal to `phi`;
    /// only the norm bound is checked.
    pub fn from_parts(values: Kernel, phi: &Field) -> Result<Self> {
        let norm = op_norm(values.frame());
        if norm >= 1.0 {
            return Err(Error::OpNormExceeded(norm));
        }
        Ok(PairKernel { values, op_norm: norm, attached_phi: phi.clone() })
    }

    pub fn values(&self) -> &Kernel {
        &self.values
    }
    pub fn frame(&self) -> &CMatrix {
        self.values.frame()
    }
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }
    pub fn phi(&self) -> &Field {
        &self.attached_phi
    }
    pub fn hs_norm(&self) -> f64 {
        self.values.hs_norm()
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn is_real(&self, tol: f64) -> bool {
        linalg::max_imag(self.frame()) <= tol
    }

    pub fn invariants(&self) -> KernelInvariants {
        let k = self.frame();
        let phi = self.attached_phi.frame();
        KernelInvariants {
            asymmetry: linalg::max_asymmetry(k),
            left_overlap: (k * phi).norm(),
            right_overlap: (k.transpose() * phi).norm(),
            op_norm: self.op_norm,
        }
    }
}

/// `Q̄ sym(k_raw) Q` with `Q = δ - φ⊗φ̄`, followed by one re-symmetrization.
pub fn project_offcondensate(k_raw: &Kernel, phi: &Field) -> Result<PairKernel> {
    let projected = project_frame(k_raw.frame(), phi);
    PairKernel::from_parts(Kernel::from_frame(projected), phi)
}

pub(crate) fn project_frame(k: &CMatrix, phi: &Field) -> CMatrix {
    let unit = phi.normalized();
    let q = linalg::projector(unit.frame());
    let s = symmetric_part(k);
    symmetric_part(&(q.map(|z| z.conj()) * s * q))
}

fn check_norm(k: &CMatrix) -> Result<()> {
    let norm = op_norm(k);
    if norm >= 1.0 {
        return Err(Error::OpNormExceeded(norm));
    }
    Ok(())
}

fn conj(k: &CMatrix) -> CMatrix {
    k.map(|z| z.conj())
}

/// `(δ - k k̄)^{-1}` on a raw frame matrix.
pub(crate) fn resolvent_frame(k: &CMatrix) -> Result<CMatrix> {
    check_norm(k)?;
    let n = k.nrows();
    let a = hermitian_part(&(CMatrix::identity(n, n) - k * conj(k)));
    let r = hpd_inverse(&a)?;
    let defect = linalg::max_abs(&(&a * &r - CMatrix::identity(n, n)));
    let scale = linalg::max_abs(&r).max(1.0);
    if defect > 1e-10 * scale {
        return Err(Error::LinAlg(format!("resolvent defect {defect:.3e}")));
    }
    Ok(r)
}

pub fn resolvent(k: &PairKernel) -> Result<Kernel> {
    resolvent_frame(k.frame()).map(Kernel::from_frame)
}

/// Non-condensate densities. `rho_weighted` holds `w_i ρ(x_i)`, the
/// diagonal of `n_pair` in the weighted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Densities {
    pub rho_weighted: DVector<f64>,
    pub n_pair: Kernel,
    pub m_pair: Kernel,
}

impl Densities {
    pub fn zero(n: usize) -> Self {
        Densities { rho_weighted: DVector::zeros(n), n_pair: Kernel::zeros(n), m_pair: Kernel::zeros(n) }
    }

    /// Point values `ρ(x_i)`.
    pub fn rho_pair(&self, grid: &Grid) -> DVector<f64> {
        DVector::from_fn(self.rho_weighted.len(), |i, _| self.rho_weighted[i] / grid.weights()[i])
    }

    /// `tr n_pair`, the expected number of non-condensate particles.
    pub fn depletion(&self) -> f64 {
        self.rho_weighted.sum()
    }

    /// Quadrature `L¹` and `L³` norms of `ρ`.
    pub fn rho_norms(&self, grid: &Grid) -> (f64, f64) {
        let rho = self.rho_pair(grid);
        let w = grid.weights();
        let l1: f64 = (0..rho.len()).map(|i| w[i] * rho[i].abs()).sum();
        let l3: f64 = (0..rho.len()).map(|i| w[i] * rho[i].abs().powi(3)).sum::<f64>().cbrt();
        (l1, l3)
    }
}

pub(crate) fn densities_from_frame(k: &CMatrix) -> Result<Densities> {
    let r = resolvent_frame(k)?;
    let n_pair = hermitian_part(&(k * conj(k) * &r));
    let m_pair = symmetric_part(&(&r * k));
    let rho_weighted = DVector::from_fn(k.nrows(), |i, _| n_pair[(i, i)].re);
    Ok(Densities { rho_weighted, n_pair: Kernel::from_frame(n_pair), m_pair: Kernel::from_frame(m_pair) })
}

/// `m = k(δ - k̄k)^{-1}`, `n = k k̄ (δ - k k̄)^{-1}`, `ρ = diag n`.
pub fn densities_from_kernel(k: &PairKernel) -> Result<Densities> {
    densities_from_frame(k.frame())
}

pub(crate) fn psi_from_frame(k: &CMatrix) -> Result<CMatrix> {
    check_norm(k)?;
    let kk = hermitian_part(&(conj(k) * k));
    let inv_sqrt = hermitian_fn(&kk, |x| (1.0 - x).max(f64::MIN_POSITIVE).powf(-0.5));
    Ok(k * inv_sqrt)
}

pub(crate) fn kernel_from_psi_frame(psi: &CMatrix) -> CMatrix {
    let pp = hermitian_part(&(conj(psi) * psi));
    psi * hermitian_fn(&pp, |x| (1.0 + x.max(0.0)).powf(-0.5))
}

/// `ψ = k(δ - k̄k)^{-1/2}`.
pub fn psi_transform(k: &PairKernel) -> Result<Kernel> {
    psi_from_frame(k.frame()).map(Kernel::from_frame)
}

/// `k = ψ(δ + ψ̄ψ)^{-1/2}`, attached to `phi`.
pub fn psi_inverse(psi: &Kernel, phi: &Field) -> Result<PairKernel> {
    PairKernel::from_parts(Kernel::from_frame(symmetric_part(&kernel_from_psi_frame(psi.frame()))), phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CVector, C64};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(z: f64) -> PairKernel {
        let phi = Field::zeros(1);
        PairKernel::from_parts(Kernel::from_frame(CMatrix::from_element(1, 1, C64::from(z))), &phi).unwrap()
    }

    fn random_phi(n: usize, rng: &mut ChaCha8Rng, complex: bool) -> Field {
        let v = CVector::from_fn(n, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), if complex { rng.gen_range(-1.0..1.0) } else { 0.0 })
        });
        Field::from_frame(v).normalized()
    }

    /// Random admissible kernel with operator norm `target`.
    pub(crate) fn random_kernel(phi: &Field, rng: &mut ChaCha8Rng, target: f64, complex: bool) -> PairKernel {
        let n = phi.len();
        let raw = CMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), if complex { rng.gen_range(-1.0..1.0) } else { 0.0 })
        });
        let p = project_frame(&raw, phi);
        let scaled = &p * C64::from(target / op_norm(&p));
        PairKernel::from_parts(Kernel::from_frame(scaled), phi).unwrap()
    }

    #[test]
    fn projection_kills_condensate_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = random_phi(8, &mut rng, false);
        let raw = Kernel::from_frame(phi.frame() * phi.frame().transpose());
        let k = project_offcondensate(&raw, &phi).unwrap();
        assert!(k.frame().norm() < 1e-14);
    }

    #[test]
    fn projection_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for complex in [false, true] {
            let phi = random_phi(10, &mut rng, complex);
            let k = random_kernel(&phi, &mut rng, 0.7, complex);
            let again = project_offcondensate(k.values(), &phi).unwrap();
            assert!(linalg::max_abs(&(again.frame() - k.frame())) < 1e-12);
        }
    }

    #[test]
    fn projection_reports_large_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_phi(6, &mut rng, false);
        let k = random_kernel(&phi, &mut rng, 0.5, false);
        let big = Kernel::from_frame(k.frame() * C64::from(3.0));
        assert!(matches!(project_offcondensate(&big, &phi), Err(Error::OpNormExceeded(x)) if (x - 1.5).abs() < 1e-9));
    }

    #[test]
    fn scalar_mode_values() {
        let k = scalar(-1.0 / 3.0);
        let r = resolvent(&k).unwrap();
        assert!((r.frame()[(0, 0)].re - 9.0 / 8.0).abs() < 1e-14);
        let d = densities_from_kernel(&k).unwrap();
        assert!((d.m_pair.frame()[(0, 0)].re + 3.0 / 8.0).abs() < 1e-14);
        assert!((d.n_pair.frame()[(0, 0)].re - 1.0 / 8.0).abs() < 1e-14);
        let psi = psi_transform(&k).unwrap();
        assert!((psi.frame()[(0, 0)].re + 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn zero_kernel_values() {
        let phi = Field::from_frame(CVector::from_element(4, C64::from(0.5)));
        let k = PairKernel::zero(&phi);
        assert_eq!(resolvent(&k).unwrap(), Kernel::identity(4));
        let d = densities_from_kernel(&k).unwrap();
        assert_eq!(d.rho_weighted.norm(), 0.0);
        assert_eq!(d.m_pair.hs_norm(), 0.0);
        assert_eq!(psi_transform(&k).unwrap().hs_norm(), 0.0);
    }

    #[test]
    fn rank_one_geometric_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_phi(9, &mut rng, true);
        let z = C64::new(0.3, -0.4);
        let kf = e.frame() * e.frame().transpose() * z;
        let d = densities_from_frame(&kf).unwrap();
        let zz = z.norm_sqr();
        let expected = e.frame() * e.frame().adjoint() * C64::from(zz / (1.0 - zz));
        assert!(linalg::max_abs(&(d.n_pair.frame() - expected)) < 1e-13);
    }

    #[test]
    fn resolvent_spectrum_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi = random_phi(12, &mut rng, true);
        let k = random_kernel(&phi, &mut rng, 0.95, true);
        let r = resolvent(&k).unwrap();
        let ev = linalg::hermitian_eigenvalues(r.frame());
        assert!(ev.min() >= 1.0 - 1e-12);
    }

    #[test]
    fn commutation_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for complex in [false, true] {
            let phi = random_phi(12, &mut rng, complex);
            let k = random_kernel(&phi, &mut rng, 0.8, complex);
            let kf = k.frame();
            let r = resolvent_frame(kf).unwrap();
            let kk = kf * conj(kf);
            assert!(linalg::max_abs(&(&kk * &r - &r * &kk)) < 1e-10);
            let n = kf.nrows();
            let r2 = (CMatrix::identity(n, n) - conj(kf) * kf).try_inverse().unwrap();
            assert!(linalg::max_abs(&(kf * r2 - &r * kf)) < 1e-10);
        }
    }

    #[test]
    fn density_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = random_phi(14, &mut rng, true);
        let k = random_kernel(&phi, &mut rng, 0.9, true);
        let d = densities_from_kernel(&k).unwrap();
        assert!(d.rho_weighted.min() >= -1e-12);
        assert!(linalg::max_antihermiticity(d.n_pair.frame()) < 1e-10);
        assert!(linalg::max_asymmetry(d.m_pair.frame()) < 1e-10);
        // trace identity against the (δ - k̄k)^{-1} ordering; the two
        // orderings agree for real kernels
        let phi = random_phi(14, &mut rng, false);
        let k = random_kernel(&phi, &mut rng, 0.9, false);
        let d = densities_from_kernel(&k).unwrap();
        let kf = k.frame();
        let n = kf.nrows();
        let alt = kf * conj(kf) * (CMatrix::identity(n, n) - conj(kf) * kf).try_inverse().unwrap();
        let tr = alt.trace();
        assert!((d.depletion() - tr.re).abs() <= 1e-10 * tr.norm());
    }

    #[test]
    fn psi_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = random_phi(10, &mut rng, true);
        let k = random_kernel(&phi, &mut rng, 0.85, true);
        let psi = psi_transform(&k).unwrap();
        let n = 10;
        let lhs = CMatrix::identity(n, n) - conj(k.frame()) * k.frame();
        let rhs = (CMatrix::identity(n, n) + conj(psi.frame()) * psi.frame()).try_inverse().unwrap();
        assert!(linalg::max_abs(&(lhs - rhs)) < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn projected_kernels_are_admissible(seed in any::<u64>(), complex in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_phi(16, &mut rng, complex);
            let raw = CMatrix::from_fn(16, 16, |_, _| C64::new(rng.gen_range(-0.02..0.02), if complex { rng.gen_range(-0.02..0.02) } else { 0.0 }));
            match project_offcondensate(&Kernel::from_frame(raw), &phi) {
                Ok(k) => prop_assert!(k.invariants().holds(), "{:?}", k.invariants()),
                Err(Error::OpNormExceeded(x)) => prop_assert!(x >= 1.0),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn psi_round_trip(seed in any::<u64>(), norm in 0.0f64..0.99, complex in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_phi(16, &mut rng, complex);
            let k = random_kernel(&phi, &mut rng, norm.max(1e-6), complex);
            let psi = psi_transform(&k).unwrap();
            let back = psi_inverse(&psi, &phi).unwrap();
            prop_assert!(linalg::max_abs(&(back.frame() - k.frame())) < 1e-9);
        }
    }
}
