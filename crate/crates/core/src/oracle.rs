//! Independent reference values: analytic solutions, a brute-force
//! quadratic-Hamiltonian diagonalizer and a first-order perturbative μ.
//!
//! Nothing here calls the assembly or solver modules; only the grid
//! primitives are shared.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{kinetic_frame, Boundary, Field, Grid, Model, Potentials, Profile, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    BruteForce,
    Perturbative,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Analytic => "analytic",
            Provenance::BruteForce => "brute_force",
            Provenance::Perturbative => "perturbative",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub name: String,
    pub inputs: BTreeMap<String, f64>,
    pub expected: Vec<Expected>,
    pub provenance: Provenance,
}

/// One compared quantity: oracle value vs the value produced by the solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub case: String,
    pub provenance: Provenance,
    pub quantity: String,
    pub expected: f64,
    pub actual: f64,
    pub tol: f64,
    pub passed: bool,
}

impl OracleCheck {
    /// Absolute comparison.
    pub fn new(case: &OracleCase, e: &Expected, actual: f64) -> Self {
        OracleCheck {
            case: case.name.clone(),
            provenance: case.provenance,
            quantity: e.name.clone(),
            expected: e.value,
            actual,
            tol: e.tol,
            passed: (actual - e.value).abs() <= e.tol,
        }
    }
}

pub fn checks_to_csv(checks: &[OracleCheck]) -> String {
    let mut out = String::from("case,provenance,quantity,expected,actual,tolerance,passed\n");
    for c in checks {
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e},{}",
            c.case,
            c.provenance.as_str(),
            c.quantity,
            c.expected,
            c.actual,
            c.tol,
            c.passed
        );
    }
    out
}

/// `π^{-d/4} exp(-|x|²/2)` sampled on the grid, with energy `d`.
pub fn oscillator_ground(grid: &Grid) -> (Field, f64) {
    let d = grid.dim() as f64;
    let norm = std::f64::consts::PI.powf(-d / 4.0);
    let f = grid.real_field_from_fn(|x| norm * (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp());
    (f, d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KineticSymbol {
    /// `|p|²`.
    Continuum,
    /// `Σ_a (4/h²) sin²(p_a h/2)`, the symbol of the three-point Laplacian.
    Lattice { spacing: f64 },
}

impl KineticSymbol {
    pub fn eval(self, p: &[f64]) -> f64 {
        match self {
            KineticSymbol::Continuum => p.iter().map(|v| v * v).sum(),
            KineticSymbol::Lattice { spacing } => {
                p.iter().map(|v| 4.0 / (spacing * spacing) * (0.5 * v * spacing).sin().powi(2)).sum()
            }
        }
    }
}

/// Parameters of the translation-invariant gas on `[-L, L)^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformGas {
    pub g: f64,
    pub extent: f64,
    pub dim: usize,
    pub n_particles: f64,
    pub beta: f64,
    pub profile: Profile,
}

impl UniformGas {
    /// `υ̂_N(p) = g exp(-w²|p|²/(2 N^{2β}))` for the Gaussian profile.
    pub fn upsilon_hat(&self, p2: f64) -> Option<f64> {
        match &self.profile {
            Profile::Gaussian { width } => {
                let s = self.n_particles.powf(self.beta);
                Some(self.g * (-width * width * p2 / (2.0 * s * s)).exp())
            }
            Profile::Tabulated { .. } => None,
        }
    }
}

/// `E(p) = √(Ĥ(p)² - Θ̂(p)²)`, `Ĥ = T(p) + υ̂_N(p)/(2L)^d`, `Θ̂ = υ̂_N(p)/(2L)^d`.
pub fn uniform_gas_dispersion(p: &[f64], gas: &UniformGas, kinetic: KineticSymbol) -> Result<f64> {
    let p2: f64 = p.iter().map(|v| v * v).sum();
    let vhat = gas
        .upsilon_hat(p2)
        .ok_or_else(|| Error::InvalidPotentials("analytic dispersion needs the Gaussian profile".into()))?;
    let theta = vhat / (2.0 * gas.extent).powi(gas.dim as i32);
    let h = kinetic.eval(p) + theta;
    Ok(((h - theta) * (h + theta)).sqrt())
}

/// Result of the brute-force diagonalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    /// Pair kernel in the weighted frame (zero on the condensate direction).
    pub k: DMatrix<f64>,
    pub spectrum: Vec<f64>,
    /// Ground-state energy `½(Σ E_j - tr h)` on the complement.
    pub energy: f64,
    /// Off-diagonal blocks of `W M W^{-1}` relative to `‖M‖`.
    pub leakage: f64,
}

fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::GapViolated(eig.eigenvalues.min()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Orthonormal complement of `phi` from a QR factorization of `[φ | I]`.
fn complement(phi: Option<&DVector<f64>>, n: usize) -> DMatrix<f64> {
    match phi {
        None => DMatrix::identity(n, n),
        Some(v) if v.norm() == 0.0 => DMatrix::identity(n, n),
        Some(v) => {
            let mut a = DMatrix::zeros(n, n + 1);
            a.set_column(0, &(v / v.norm()));
            a.view_mut((0, 1), (n, n)).copy_from(&DMatrix::identity(n, n));
            let q = a.qr().q();
            q.columns(1, n - 1).into_owned()
        }
    }
}

/// Diagonalizes the quadratic Hamiltonian with real symmetric `(h, θ)` on
/// the complement of `phi` through the symmetric reduction
/// `(h+θ)^{1/2}(h-θ)(h+θ)^{1/2}`, reconstructs `(u_j, p_j)`, and returns
/// `k` from `k u_j = -p_j`.
pub fn brute_force_block_diag(
    h: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    phi: Option<&DVector<f64>>,
) -> Result<BruteForce> {
    let n = h.nrows();
    let b = complement(phi, n);
    let hr = b.transpose() * h * &b;
    let hr = (&hr + hr.transpose()) * 0.5;
    let tr = b.transpose() * theta * &b;
    let tr = (&tr + tr.transpose()) * 0.5;
    let m = hr.nrows();
    let plus = &hr + &tr;
    let minus = &hr - &tr;
    let root = sym_sqrt(&plus)?;
    let s = &root * &minus * &root;
    let eig = SymmetricEigen::new((&s + s.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut u = DMatrix::zeros(m, m);
    let mut p = DMatrix::zeros(m, m);
    let mut spectrum = Vec::with_capacity(m);
    for (col, &i) in order.iter().enumerate() {
        let e2 = eig.eigenvalues[i];
        if e2 <= 0.0 {
            return Err(Error::GapViolated(e2));
        }
        let e = e2.sqrt();
        let a = &root * eig.eigenvectors.column(i) / e.sqrt();
        let bv = &minus * &a / e;
        u.set_column(col, &((&a + &bv) * 0.5));
        p.set_column(col, &((&a - &bv) * 0.5));
        spectrum.push(e);
    }
    let uinv = u.clone().try_inverse().ok_or(Error::SingularFrame(f64::INFINITY))?;
    let kr = -(&p * uinv);
    let kr = (&kr + kr.transpose()) * 0.5;
    // W M W^{-1} with W = [[I, k], [k, I]]
    let mut big = DMatrix::zeros(2 * m, 2 * m);
    big.view_mut((0, 0), (m, m)).copy_from(&hr);
    big.view_mut((0, m), (m, m)).copy_from(&(-&tr));
    big.view_mut((m, 0), (m, m)).copy_from(&tr);
    big.view_mut((m, m), (m, m)).copy_from(&(-&hr));
    let mut w = DMatrix::identity(2 * m, 2 * m);
    w.view_mut((0, m), (m, m)).copy_from(&kr);
    w.view_mut((m, 0), (m, m)).copy_from(&kr);
    let winv = w.clone().try_inverse().ok_or(Error::SingularFrame(f64::INFINITY))?;
    let d = &w * &big * winv;
    let off = d.view((0, m), (m, m)).norm().max(d.view((m, 0), (m, m)).norm());
    let leakage = off / big.norm().max(f64::MIN_POSITIVE);
    let energy = 0.5 * (spectrum.iter().sum::<f64>() - hr.trace());
    Ok(BruteForce { k: &b * kr * b.transpose(), spectrum, energy, leakage })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbativeMu {
    pub mu_zero: f64,
    /// `∬|φ_ho|² (υ_N/g) |φ_ho|²`.
    pub slope: f64,
    pub value: f64,
}

/// `μ(g) ≈ μ(0) + g ∬|φ_ho|²(υ_N/g)|φ_ho|²` on the geometry of `base`,
/// with `φ_ho` the discrete ground state of `-Δ + V`.
pub fn perturbative_mu(g: f64, base: &Model) -> Result<PerturbativeMu> {
    let grid = &base.grid;
    let pot = &base.potentials;
    let n = grid.len();
    let mut one = kinetic_frame(grid);
    for i in 0..n {
        one[(i, i)] += pot.v_trap[i];
    }
    let eig = SymmetricEigen::new(one);
    let i0 = eig.eigenvalues.imin();
    let mu_zero = eig.eigenvalues[i0];
    let rho: DVector<f64> = eig.eigenvectors.column(i0).map(|v| v * v);
    let unit = Potentials::new(grid, pot.trap.clone(), pot.profile.clone(), 1.0, pot.beta, pot.n_particles)?;
    let mut slope = 0.0;
    for i in 0..n {
        for j in 0..n {
            slope += rho[i] * unit.upsilon_n(grid.distance(i, j)) * rho[j];
        }
    }
    Ok(PerturbativeMu { mu_zero, slope, value: mu_zero + g * slope })
}

/// Momenta `2πm/(2L)` of a periodic 1D grid with `m = 1, …, n/2`.
pub fn periodic_momenta(grid: &Grid) -> Vec<f64> {
    let len = 2.0 * grid.extent();
    (1..=grid.points_per_axis() / 2).map(|m| 2.0 * std::f64::consts::PI * m as f64 / len).collect()
}

/// The eigenvalues `E_p` of the uniform gas first iterate, each listed with
/// its multiplicity on a 1D periodic grid (±p pairs, single Nyquist mode).
pub fn uniform_gas_spectrum(grid: &Grid, gas: &UniformGas) -> Result<Vec<f64>> {
    if grid.boundary() != Boundary::Periodic || grid.dim() != 1 {
        return Err(Error::InvalidGrid("uniform gas spectrum needs a periodic 1D grid".into()));
    }
    let kin = KineticSymbol::Lattice { spacing: grid.spacing() };
    let n = grid.points_per_axis();
    let mut out = Vec::with_capacity(n - 1);
    for (idx, p) in periodic_momenta(grid).iter().enumerate() {
        let e = uniform_gas_dispersion(&[*p], gas, kin)?;
        out.push(e);
        if 2 * (idx + 1) != n {
            out.push(e);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Real point-value cos/sin modes of a 1D periodic grid, as columns of an
/// orthonormal frame, constant mode first.
pub fn real_fourier_frame(grid: &Grid) -> DMatrix<f64> {
    let n = grid.points_per_axis();
    let x = grid.axis_nodes();
    let mut f = DMatrix::zeros(n, n);
    let mut col = 0;
    f.set_column(col, &DVector::from_element(n, 1.0));
    col += 1;
    for m in 1..=n / 2 {
        let p = 2.0 * std::f64::consts::PI * m as f64 / (2.0 * grid.extent());
        f.set_column(col, &DVector::from_fn(n, |i, _| (p * x[i]).cos()));
        col += 1;
        if 2 * m != n {
            f.set_column(col, &DVector::from_fn(n, |i, _| (p * x[i]).sin()));
            col += 1;
        }
    }
    for mut c in f.column_iter_mut() {
        let nrm = c.norm();
        c /= nrm;
    }
    f
}

/// Helper: complex frame matrix → real matrix, failing on imaginary parts.
pub fn real_part(m: &nalgebra::DMatrix<C64>) -> Result<DMatrix<f64>> {
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if m.iter().any(|z| z.im.abs() > 1e-12 * scale) {
        return Err(Error::NotRealField("brute-force oracle"));
    }
    Ok(m.map(|z| z.re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::presets::harmonic_trap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oscillator_normalization_and_energy() {
        let grid = build_grid(1, 10.0, 256, Boundary::Dirichlet).unwrap();
        let (f, e) = oscillator_ground(&grid);
        assert!((f.norm() - 1.0).abs() < 1e-6);
        assert_eq!(e, 1.0);
        let g2 = build_grid(2, 6.0, 24, Boundary::Dirichlet).unwrap();
        assert_eq!(oscillator_ground(&g2).1, 2.0);
    }

    fn gas(g: f64) -> UniformGas {
        UniformGas { g, extent: 10.0, dim: 1, n_particles: 100.0, beta: 1.0 / 6.0, profile: Profile::Gaussian { width: 1.0 } }
    }

    #[test]
    fn dispersion_limits() {
        let p = 0.7;
        assert!((uniform_gas_dispersion(&[p], &gas(0.0), KineticSymbol::Continuum).unwrap() - p * p).abs() < 1e-15);
        let big = 300.0;
        let e = uniform_gas_dispersion(&[big], &gas(1.0), KineticSymbol::Continuum).unwrap();
        assert!((e / (big * big) - 1.0).abs() < 1e-6);
        // δ-limit: very large N makes υ̂_N(p) → g
        let mut delta = gas(0.4);
        delta.n_particles = 1e30;
        let e = uniform_gas_dispersion(&[p], &delta, KineticSymbol::Continuum).unwrap();
        let closed = (p.powi(4) + 2.0 * 0.4 * p * p / 20.0).sqrt();
        assert!((e - closed).abs() < 1e-12);
    }

    #[test]
    fn scalar_brute_force() {
        let h = DMatrix::from_element(1, 1, 5.0);
        let t = DMatrix::from_element(1, 1, 3.0);
        let bf = brute_force_block_diag(&h, &t, None).unwrap();
        assert!((bf.k[(0, 0)] + 1.0 / 3.0).abs() < 1e-14);
        assert!((bf.spectrum[0] - 4.0).abs() < 1e-14);
        assert!((bf.energy + 0.5).abs() < 1e-14);
    }

    #[test]
    fn decoupled_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let h = &a * a.transpose() + DMatrix::identity(5, 5);
        let bf = brute_force_block_diag(&h, &DMatrix::zeros(5, 5), None).unwrap();
        assert!(bf.k.norm() < 1e-13 && bf.energy.abs() < 1e-13);
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(bf.spectrum.iter().zip(&ev).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn commuting_pair_mode_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let hs: Vec<f64> = (0..6).map(|_| rng.gen_range(2.0..4.0)).collect();
        let ts: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let h = &q * DMatrix::from_diagonal(&DVector::from_vec(hs.clone())) * q.transpose();
        let t = &q * DMatrix::from_diagonal(&DVector::from_vec(ts.clone())) * q.transpose();
        let bf = brute_force_block_diag(&h, &t, None).unwrap();
        let mut modes: Vec<f64> = hs.iter().zip(&ts).map(|(h, t)| (h * h - t * t).sqrt()).collect();
        modes.sort_by(f64::total_cmp);
        assert!(bf.spectrum.iter().zip(&modes).all(|(x, y)| (x - y).abs() < 1e-12));
        let energy: f64 = hs.iter().zip(&ts).map(|(h, t)| -0.5 * (h - (h * h - t * t).sqrt())).sum();
        assert!((bf.energy - energy).abs() < 1e-12);
        let kd = q.transpose() * &bf.k * &q;
        for j in 0..6 {
            let z = -ts[j] / (hs[j] + (hs[j] * hs[j] - ts[j] * ts[j]).sqrt());
            assert!((kd[(j, j)] - z).abs() < 1e-12);
        }
        assert!(bf.leakage < 1e-13);
    }

    #[test]
    fn constrained_complement() {
        let phi = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let b = complement(Some(&phi), 3);
        assert!((b.transpose() * &b - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert!((b.transpose() * &phi).norm() < 1e-14);
    }

    #[test]
    fn perturbative_slope() {
        let base = harmonic_trap(1, 8.0, 64, 0.0, 1.0 / 6.0, 100).unwrap();
        let p = perturbative_mu(0.0, &base).unwrap();
        assert_eq!(p.value, p.mu_zero);
        assert!((p.mu_zero - 1.0).abs() < 2e-2);
        assert!(p.slope > 0.0);
    }

    #[test]
    fn fourier_frame_is_orthonormal() {
        let grid = build_grid(1, 10.0, 16, Boundary::Periodic).unwrap();
        let f = real_fourier_frame(&grid);
        assert!(((f.transpose() * &f) - DMatrix::identity(16, 16)).norm() < 1e-13);
    }
}
