//! Dense helpers shared by the kernel algebra: Hermitian spectral calculus,
//! orthogonal complements and divided differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{CMatrix, CVector, C64};

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eig(m: &CMatrix) -> (DVector<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_fn(order.len(), |i, _| eig.eigenvalues[order[i]]);
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Same as [`hermitian_eig`] for real symmetric input.
pub fn symmetric_eig(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_fn(order.len(), |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> DVector<f64> {
    let mut v = m.clone().symmetric_eigenvalues();
    v.as_mut_slice().sort_by(f64::total_cmp);
    v
}

/// `V f(Λ) V*` for a Hermitian matrix.
pub fn hermitian_fn<F: Fn(f64) -> f64>(m: &CMatrix, f: F) -> CMatrix {
    let (vals, vecs) = hermitian_eig(m);
    from_spectrum(&vals.map(f), &vecs)
}

pub fn from_spectrum(vals: &DVector<f64>, vecs: &CMatrix) -> CMatrix {
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= C64::from(vals[j]);
    }
    scaled * vecs.adjoint()
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::from(0.5)
}

pub fn symmetric_part(m: &CMatrix) -> CMatrix {
    (m + m.transpose()) * C64::from(0.5)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_asymmetry(m: &CMatrix) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn max_antihermiticity(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn max_imag(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}

/// Largest singular value, as the square root of `λ_max(A* A)`.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = hermitian_part(&(m.adjoint() * m));
    hermitian_eigenvalues(&gram).max().max(0.0).sqrt()
}

/// `I - φ φ*` for unit `φ`.
pub fn projector(phi: &CVector) -> CMatrix {
    let n = phi.len();
    CMatrix::identity(n, n) - phi * phi.adjoint()
}

/// Orthonormal basis (columns) of the complement of `φ`, via one Householder
/// reflection pivoted on the largest entry of `φ`.
pub fn complement_basis(phi: &CVector) -> CMatrix {
    let n = phi.len();
    let nrm = phi.norm();
    if nrm == 0.0 {
        return CMatrix::identity(n, n);
    }
    let v = phi / C64::from(nrm);
    let p = (0..n).fold(0, |b, i| if v[i].norm() > v[b].norm() { i } else { b });
    let alpha = if v[p].norm() > 0.0 { -v[p] / v[p].norm() } else { C64::from(1.0) };
    let mut w = v.clone();
    w[p] -= alpha;
    let ww = w.norm_squared();
    let mut h = CMatrix::identity(n, n);
    if ww > 0.0 {
        h -= (&w * w.adjoint()) * C64::from(2.0 / ww);
    }
    let cols: Vec<usize> = (0..n).filter(|&j| j != p).collect();
    CMatrix::from_fn(n, n - 1, |i, j| h[(i, cols[j])])
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn hpd_inverse(m: &CMatrix) -> Result<CMatrix> {
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::LinAlg("matrix not positive definite".into()))?;
    Ok(hermitian_part(&chol.inverse()))
}

/// Fréchet derivative of the spectral function `f` at the Hermitian matrix
/// with eigenpairs `(vals, vecs)`, applied to the direction `g`
/// (Daleckii-Krein formula).
pub fn spectral_derivative<F, D>(vals: &DVector<f64>, vecs: &CMatrix, f: F, df: D, g: &CMatrix) -> CMatrix
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let n = vals.len();
    let gt = vecs.adjoint() * g * vecs;
    let fv: Vec<f64> = vals.iter().map(|&x| f(x)).collect();
    let scale = vals.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let inner = CMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (vals[i], vals[j]);
        let q = if (a - b).abs() <= 1e-9 * scale {
            df(0.5 * (a + b))
        } else {
            (fv[i] - fv[j]) / (a - b)
        };
        gt[(i, j)] * q
    });
    vecs * inner * vecs.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        hermitian_part(&a)
    }

    #[test]
    fn eig_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_hermitian(9, &mut rng);
        let (vals, vecs) = hermitian_eig(&m);
        assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
        assert!((from_spectrum(&vals, &vecs) - &m).norm() < 1e-12);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = CVector::from_fn(7, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let phi = &phi / C64::from(phi.norm());
        let b = complement_basis(&phi);
        assert_eq!(b.ncols(), 6);
        assert!((b.adjoint() * &b - CMatrix::identity(6, 6)).norm() < 1e-13);
        assert!((b.adjoint() * &phi).norm() < 1e-13);
        assert!((&b * b.adjoint() - projector(&phi)).norm() < 1e-13);
    }

    #[test]
    fn op_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = CMatrix::from_fn(6, 6, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let svd = a.clone().singular_values().max();
        assert!((op_norm(&a) - svd).abs() < 1e-12);
    }

    #[test]
    fn spectral_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_hermitian(6, &mut rng);
        let g = random_hermitian(6, &mut rng);
        let f = |x: f64| x * (1.0 + x * x).sqrt();
        let df = |x: f64| (1.0 + 2.0 * x * x) / (1.0 + x * x).sqrt();
        let (vals, vecs) = hermitian_eig(&a);
        let d = spectral_derivative(&vals, &vecs, f, df, &g);
        let h = 1e-6;
        let fd = (hermitian_fn(&(&a + &g * C64::from(h)), f) - hermitian_fn(&(&a - &g * C64::from(h)), f))
            / C64::from(2.0 * h);
        assert!((d - fd).norm() < 1e-7);
    }
}
