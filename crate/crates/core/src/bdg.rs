//! Quasiparticle (Bogoliubov-de Gennes) eigenproblem, kernel reconstruction
//! and the structural checks of the block diagonalization.
//!
//! Modes live on `(φ)_⊥`. With `B` an orthonormal basis of `(φ)_⊥`,
//! `u = B a` and `p = B̄ b`, the reduced block matrix is
//! `M = [[h, -t], [t̄, -hᵀ]]` with `h = B*HB`, `t = B*ΘB̄`. `J M` is Hermitian
//! and positive definite under the gap condition, so `M v = E v` is solved as
//! the definite pencil `K v = E J v`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CMatrix, Field, Kernel, C64};
use crate::linalg::{self, complement_basis, hermitian_eig, hermitian_fn, hermitian_part, symmetric_part};
use crate::pair_kernel::{densities_from_kernel, PairKernel};

#[derive(Clone, Debug)]
pub struct BdgSolution {
    pub energies: Vec<f64>,
    pub u: Vec<Field>,
    pub p: Vec<Field>,
    pub count: usize,
    pub norm_defects: Vec<f64>,
    h: CMatrix,
    theta: CMatrix,
    phi: Field,
}

impl BdgSolution {
    pub fn u_matrix(&self) -> CMatrix {
        stack(&self.u, self.phi.len())
    }
    pub fn p_matrix(&self) -> CMatrix {
        stack(&self.p, self.phi.len())
    }
    pub fn phi(&self) -> &Field {
        &self.phi
    }

    /// Largest violation of `‖u_j‖² - ‖p_j‖² = 1` and of the two
    /// symplectic orthogonality relations between distinct modes.
    pub fn symplectic_defect(&self) -> f64 {
        let u = self.u_matrix();
        let p = self.p_matrix();
        let gram = u.adjoint() * &u - p.adjoint() * &p;
        let skew = u.transpose() * &p - p.transpose() * &u;
        let m = gram.nrows();
        let orth = linalg::max_abs(&(gram - CMatrix::identity(m, m)));
        orth.max(linalg::max_abs(&skew))
    }
}

fn stack(fields: &[Field], n: usize) -> CMatrix {
    CMatrix::from_fn(n, fields.len(), |i, j| fields[j].frame()[i])
}

fn conj(m: &CMatrix) -> CMatrix {
    m.map(|z| z.conj())
}

fn reduced(h: &CMatrix, theta: &CMatrix, b: &CMatrix) -> (CMatrix, CMatrix) {
    let hr = hermitian_part(&(b.adjoint() * h * b));
    let tr = symmetric_part(&(b.adjoint() * theta * conj(b)));
    (hr, tr)
}

/// `[[h, -t], [t̄, -hᵀ]]`.
fn block_matrix(hr: &CMatrix, tr: &CMatrix) -> CMatrix {
    let m = hr.nrows();
    let mut big = CMatrix::zeros(2 * m, 2 * m);
    big.view_mut((0, 0), (m, m)).copy_from(hr);
    big.view_mut((0, m), (m, m)).copy_from(&(-tr));
    big.view_mut((m, 0), (m, m)).copy_from(&conj(tr));
    big.view_mut((m, m), (m, m)).copy_from(&(-hr.transpose()));
    big
}

/// Largest imaginary part among the eigenvalues of a general matrix.
fn spectrum_imag(m: &CMatrix) -> (f64, f64) {
    match m.clone().schur().eigenvalues() {
        Some(ev) => {
            let imag = ev.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            let min_pos = ev.iter().filter(|z| z.re > 0.0).map(|z| z.re).fold(f64::INFINITY, f64::min);
            (imag, min_pos)
        }
        None => (f64::INFINITY, f64::NAN),
    }
}

pub fn solve_bdg(h: &Kernel, theta: &Kernel, phi: &Field) -> Result<BdgSolution> {
    let b = complement_basis(phi.normalized().frame());
    let m = b.ncols();
    let (hr, tr) = reduced(h.frame(), theta.frame(), &b);
    let (energies, a, bb) = if tr.iter().all(|z| *z == C64::from(0.0)) {
        let (vals, vecs) = hermitian_eig(&hr);
        if vals.min() <= 0.0 {
            return Err(Error::GapViolated(vals.min()));
        }
        (vals.as_slice().to_vec(), vecs, CMatrix::zeros(m, m))
    } else {
        pencil_modes(&hr, &tr)?
    };
    let bc = conj(&b);
    let mut u = Vec::with_capacity(m);
    let mut p = Vec::with_capacity(m);
    let mut norm_defects = Vec::with_capacity(m);
    for j in 0..m {
        let uj = &b * a.column(j);
        let pj = &bc * bb.column(j);
        norm_defects.push((uj.norm_squared() - pj.norm_squared() - 1.0).abs());
        u.push(Field::from_frame(uj));
        p.push(Field::from_frame(pj));
    }
    if u.len() != m {
        return Err(Error::NondiagonalizableBlock { expected: m, found: u.len() });
    }
    if let Some(e) = energies.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::GapViolated(*e));
    }
    Ok(BdgSolution {
        count: m,
        energies,
        u,
        p,
        norm_defects,
        h: h.frame().clone(),
        theta: theta.frame().clone(),
        phi: phi.clone(),
    })
}

/// Positive-norm modes of the reduced pencil, ascending in energy.
fn pencil_modes(hr: &CMatrix, tr: &CMatrix) -> Result<(Vec<f64>, CMatrix, CMatrix)> {
    let m = hr.nrows();
    let mut j = CMatrix::identity(2 * m, 2 * m);
    for i in m..2 * m {
        j[(i, i)] = C64::from(-1.0);
    }
    let big = block_matrix(hr, tr);
    let k = hermitian_part(&(&j * &big));
    // complex Cholesky in nalgebra takes complex square roots of negative
    // pivots instead of failing, so definiteness is checked on the diagonal
    let l = k
        .clone()
        .cholesky()
        .map(|c| c.l())
        .filter(|l| l.diagonal().iter().all(|d| d.re > 0.0 && d.im.abs() <= 1e-12 * d.re));
    let Some(l) = l else {
        let (imag, min_pos) = spectrum_imag(&big);
        return Err(if imag > 1e-8 { Error::ComplexSpectrum(imag) } else { Error::GapViolated(min_pos) });
    };
    // C = L^{-1} J L^{-*}
    let mut linv_j = j.clone();
    l.solve_lower_triangular_mut(&mut linv_j);
    let mut c = linv_j.adjoint();
    l.solve_lower_triangular_mut(&mut c);
    let c = hermitian_part(&c);
    let (lams, ws) = hermitian_eig(&c);
    let mut modes: Vec<(f64, usize)> = (0..2 * m).filter(|&i| lams[i] > 0.0).map(|i| (1.0 / lams[i], i)).collect();
    if modes.len() != m {
        return Err(Error::NondiagonalizableBlock { expected: m, found: modes.len() });
    }
    modes.sort_by(|x, y| x.0.total_cmp(&y.0));
    let lt = l.adjoint();
    let mut a = CMatrix::zeros(m, m);
    let mut bmat = CMatrix::zeros(m, m);
    for (col, &(_, i)) in modes.iter().enumerate() {
        let mut v = ws.column(i).into_owned();
        lt.solve_upper_triangular_mut(&mut v);
        v /= C64::from(lams[i].sqrt());
        a.set_column(col, &v.rows(0, m));
        bmat.set_column(col, &v.rows(m, m));
    }
    Ok((modes.iter().map(|x| x.0).collect(), a, bmat))
}

fn require_real(what: &'static str, ms: &[&CMatrix]) -> Result<()> {
    for m in ms {
        let scale = linalg::max_abs(m).max(1.0);
        if linalg::max_imag(m) > 1e-12 * scale {
            return Err(Error::NotRealField(what));
        }
    }
    Ok(())
}

/// Solves `k u_j = -p_j` on `(φ)_⊥`, then symmetrizes and projects.
pub fn kernel_from_bdg(sol: &BdgSolution, phi: &Field) -> Result<PairKernel> {
    let phi_m = CMatrix::from_column_slice(phi.len(), 1, phi.frame().as_slice());
    require_real("kernel reconstruction", &[&sol.h, &sol.theta, &phi_m])?;
    let b = complement_basis(phi.normalized().frame());
    let ur = b.adjoint() * sol.u_matrix();
    let pr = b.transpose() * sol.p_matrix();
    let sv = ur.clone().singular_values();
    let cond = sv.max() / sv.min();
    if !(cond <= 1e10) {
        return Err(Error::SingularFrame(cond));
    }
    // k_r U_r = -P_r  <=>  U_rᵀ k_rᵀ = -P_rᵀ
    let lu = ur.transpose().lu();
    let krt = lu.solve(&(-pr.transpose())).ok_or(Error::SingularFrame(f64::INFINITY))?;
    let kr = symmetric_part(&krt.transpose());
    let k = conj(&b) * kr * b.adjoint();
    let k = crate::pair_kernel::project_frame(&k, phi);
    let kernel = PairKernel::from_parts(Kernel::from_frame(k), &phi.normalized())?;
    let abs = riccati_abs(kernel.frame(), &sol.h, &sol.theta, phi.normalized().frame());
    let bound = 1e-8 * (sol.h.norm() + sol.theta.norm());
    if abs > bound {
        return Err(Error::RiccatiResidual { residual: abs, bound });
    }
    Ok(kernel)
}

fn riccati_abs(k: &CMatrix, h: &CMatrix, theta: &CMatrix, phi: &nalgebra::DVector<C64>) -> f64 {
    let q = linalg::projector(phi);
    let r = h * k + k * h.transpose() + theta + k * conj(theta) * k;
    (conj(&q) * r * q).norm()
}

/// `‖Q(hk + khᵀ + θ + kθ̄k)Q‖_HS / max(‖θ‖_HS, ε)`.
pub fn riccati_residual(k: &Kernel, h: &Kernel, theta: &Kernel, phi: &Field) -> f64 {
    let num = riccati_abs(k.frame(), h.frame(), theta.frame(), phi.normalized().frame());
    num / theta.hs_norm().max(f64::MIN_POSITIVE)
}

/// The magnitude-<1 root of `θ̄z² + 2hz + θ = 0`, `z = -θ/(h + √(h² - |θ|²))`.
pub fn scalar_mode_root(h: f64, theta: C64) -> Result<C64> {
    let t = theta.norm();
    if !(h > t) {
        return Err(Error::GapViolated(h - t));
    }
    let disc = ((h - t) * (h + t)).sqrt();
    Ok(-theta / (h + disc))
}

/// `-½ Σ_j (h_jj - √(h_jj² - |θ_jj|²))` over a frame (columns of `frame`)
/// that diagonalizes `h` (sesquilinear) and `θ` (bilinear) together.
pub fn mode_energy_sum(h: &Kernel, theta: &Kernel, frame: &CMatrix) -> Result<f64> {
    let hd = frame.adjoint() * h.frame() * frame;
    let td = frame.transpose() * theta.frame() * frame;
    let m = hd.nrows();
    let mut leak: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                leak = leak.max(hd[(i, j)].norm()).max(td[(i, j)].norm());
            }
        }
    }
    let scale = linalg::max_abs(&hd).max(linalg::max_abs(&td)).max(1.0);
    if leak > 1e-8 * scale {
        return Err(Error::FrameNotCommuting(leak));
    }
    let mut sum = 0.0;
    for j in 0..m {
        let hj = hd[(j, j)].re;
        let tj = td[(j, j)].norm();
        if !(hj > tj) {
            return Err(Error::GapViolated(hj - tj));
        }
        sum += hj - ((hj - tj) * (hj + tj)).sqrt();
    }
    Ok(-0.5 * sum)
}

#[derive(Clone, Debug, Serialize)]
pub struct SimilarityReport {
    /// Norm of the off-diagonal blocks of `W M W^{-1}`.
    pub leakage: f64,
    /// Deviation of the diagonal blocks from `hᵀ + k θ̄` and `-(h + k̄ θ)`.
    pub block_error: f64,
    /// `‖M‖` (Frobenius) of the reduced block matrix.
    pub m_norm: f64,
    /// Largest mismatch between the spectrum of `hᵀ + kθ̄` and the energies.
    pub spectrum_error: f64,
    /// Largest mismatch between reconstructed and solved modes, compared
    /// through the projector onto each degenerate group.
    pub mode_error: f64,
    pub passed: bool,
}

/// Reduced coordinates of `k` on `(φ)_⊥` (`k = B̄ k_r B*`).
fn reduced_kernel(k: &CMatrix, b: &CMatrix) -> CMatrix {
    b.transpose() * k * b
}

/// Modes `u_j = G^{-1/2} η_j`, `p_j = -k u_j` with `G = δ - k̄k`, where
/// `η_j` are the eigenvectors of `G^{1/2}(h + θk)G^{-1/2}`. That operator is
/// self-adjoint when `k` solves the Riccati equation, and `h + θk` is the
/// transpose of the diagonal block `hᵀ + kθ̄` (real case), so the spectra agree.
pub fn modes_from_kernel(k: &PairKernel, h: &Kernel, theta: &Kernel) -> Result<(Vec<f64>, CMatrix, CMatrix)> {
    let phi = k.phi().normalized();
    let b = complement_basis(phi.frame());
    let m = b.ncols();
    let (hr, tr) = reduced(h.frame(), theta.frame(), &b);
    let kr = reduced_kernel(k.frame(), &b);
    let a = &hr + &tr * &kr;
    let g = hermitian_part(&(CMatrix::identity(m, m) - conj(&kr) * &kr));
    let g_half = hermitian_fn(&g, |x| x.max(0.0).sqrt());
    let g_mhalf = hermitian_fn(&g, |x| 1.0 / x.max(f64::MIN_POSITIVE).sqrt());
    let sym = &g_half * &a * &g_mhalf;
    let (vals, eta) = hermitian_eig(&hermitian_part(&sym));
    let u = &b * (&g_mhalf * eta);
    let p = -(k.frame() * &u);
    Ok((vals.as_slice().to_vec(), u, p))
}

fn group_projectors(energies: &[f64], u: &CMatrix, p: &CMatrix) -> Vec<(usize, usize, CMatrix)> {
    let n = u.nrows();
    let mut out = Vec::new();
    let mut start = 0;
    while start < energies.len() {
        let mut end = start + 1;
        while end < energies.len() && (energies[end] - energies[start]).abs() <= 1e-8 * energies[start].abs().max(1.0) {
            end += 1;
        }
        let mut stacked = CMatrix::zeros(2 * n, end - start);
        for (c, j) in (start..end).enumerate() {
            stacked.view_mut((0, c), (n, 1)).copy_from(&u.column(j));
            stacked.view_mut((n, c), (n, 1)).copy_from(&p.column(j));
        }
        out.push((start, end, &stacked * stacked.adjoint()));
        start = end;
    }
    out
}

pub fn verify_similarity(k: &PairKernel, h: &Kernel, theta: &Kernel, sol: &BdgSolution) -> Result<SimilarityReport> {
    let phi = k.phi().normalized();
    let b = complement_basis(phi.frame());
    let m = b.ncols();
    let (hr, tr) = reduced(h.frame(), theta.frame(), &b);
    let kr = reduced_kernel(k.frame(), &b);
    let big = block_matrix(&hr, &tr);
    let mut w = CMatrix::identity(2 * m, 2 * m);
    w.view_mut((0, m), (m, m)).copy_from(&kr);
    w.view_mut((m, 0), (m, m)).copy_from(&conj(&kr));
    let w_inv = w.clone().try_inverse().ok_or(Error::SingularFrame(f64::INFINITY))?;
    let sim = &w * &big * w_inv;
    let off = sim.view((0, m), (m, m)).norm().max(sim.view((m, 0), (m, m)).norm());
    let top = hr.transpose() + &kr * conj(&tr);
    let bottom = -(&hr + conj(&kr) * &tr);
    let block_error = (sim.view((0, 0), (m, m)) - &top).norm().max((sim.view((m, m), (m, m)) - &bottom).norm());
    let m_norm = big.norm();

    let (vals, u, p) = modes_from_kernel(k, h, theta)?;
    let scale = vals.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let spectrum_error = if vals.len() == sol.energies.len() {
        vals.iter().zip(&sol.energies).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    } else {
        f64::INFINITY
    };
    let mine = group_projectors(&vals, &u, &p);
    let theirs = group_projectors(&sol.energies, &sol.u_matrix(), &sol.p_matrix());
    let mode_error = if mine.len() == theirs.len() && mine.iter().zip(&theirs).all(|(a, b)| a.0 == b.0 && a.1 == b.1) {
        mine.iter().zip(&theirs).map(|(a, b)| linalg::max_abs(&(&a.2 - &b.2))).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let tol = 1e-7 * m_norm;
    let passed = off <= tol && block_error <= tol && spectrum_error <= 1e-7 && mode_error <= 1e-7;
    Ok(SimilarityReport { leakage: off, block_error, m_norm, spectrum_error, mode_error, passed })
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityExpansionReport {
    /// `max |Σ p_j p̄_j - k k̄ (δ - k̄ k)^{-1}|`.
    pub n_error: f64,
    /// Deviation of `-Σ u_j p̄_j` from the stored `m_pair`.
    pub m_error_minus: f64,
    /// Deviation of `+Σ u_j p̄_j` from the stored `m_pair`.
    pub m_error_plus: f64,
    /// Which sign of the `u p̄` expansion reproduces `m_pair`.
    pub matched_sign: char,
    pub passed: bool,
}

pub fn verify_density_expansion(k: &PairKernel, sol: &BdgSolution) -> Result<DensityExpansionReport> {
    let dens = densities_from_kernel(k)?;
    let u = sol.u_matrix();
    let p = sol.p_matrix();
    let n_sum = &p * p.adjoint();
    let up = &u * p.adjoint();
    let n_error = linalg::max_abs(&(n_sum - dens.n_pair.frame()));
    let m_error_minus = linalg::max_abs(&(-&up - dens.m_pair.frame()));
    let m_error_plus = linalg::max_abs(&(&up - dens.m_pair.frame()));
    let matched_sign = if m_error_minus <= m_error_plus { '-' } else { '+' };
    let passed = n_error <= 1e-7 && m_error_minus.min(m_error_plus) <= 1e-7;
    Ok(DensityExpansionReport { n_error, m_error_minus, m_error_plus, matched_sign, passed })
}

/// A solution assembled from a kernel and an arbitrary orthonormal basis
/// `eta` of `(φ)_⊥` (columns, reduced coordinates), with the given energies.
/// Used to test the density expansion independently of any eigensolve.
pub fn synthetic_solution(k: &PairKernel, eta: &CMatrix, energies: &[f64]) -> BdgSolution {
    let phi = k.phi().normalized();
    let b = complement_basis(phi.frame());
    let m = b.ncols();
    let kr = reduced_kernel(k.frame(), &b);
    let g = hermitian_part(&(CMatrix::identity(m, m) - conj(&kr) * &kr));
    let g_mhalf = hermitian_fn(&g, |x| 1.0 / x.max(f64::MIN_POSITIVE).sqrt());
    let ur = g_mhalf * eta;
    let u = &b * &ur;
    let p = -(k.frame() * &u);
    let n = phi.len();
    let mut us = Vec::new();
    let mut ps = Vec::new();
    let mut defects = Vec::new();
    for j in 0..m {
        let uj = u.column(j).into_owned();
        let pj = p.column(j).into_owned();
        defects.push((uj.norm_squared() - pj.norm_squared() - 1.0).abs());
        us.push(Field::from_frame(uj));
        ps.push(Field::from_frame(pj));
    }
    BdgSolution {
        energies: energies.to_vec(),
        u: us,
        p: ps,
        count: m,
        norm_defects: defects,
        h: CMatrix::zeros(n, n),
        theta: CMatrix::zeros(n, n),
        phi,
    }
}

/// Eigenvalues of the reduced block matrix from a general (Schur)
/// eigensolve, sorted by real part; a diagnostic cross-check.
pub fn block_spectrum(h: &Kernel, theta: &Kernel, phi: &Field) -> Vec<C64> {
    let b = complement_basis(phi.normalized().frame());
    let (hr, tr) = reduced(h.frame(), theta.frame(), &b);
    let mut ev: Vec<C64> = block_matrix(&hr, &tr)
        .schur()
        .eigenvalues()
        .map(|v: DVector<C64>| v.iter().copied().collect())
        .unwrap_or_default();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re));
    ev
}
