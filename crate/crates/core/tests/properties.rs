//! Property tests through the public API.

use bec_pairing::bdg::{kernel_from_bdg, riccati_residual, solve_bdg};
use bec_pairing::config::parse_config_str;
use bec_pairing::energy::{psi_form_energy, total_energy, trace_energy};
use bec_pairing::linalg::op_norm;
use bec_pairing::oracle::{brute_force_block_diag, real_part};
use bec_pairing::pair_kernel::{project_offcondensate, psi_transform, PairKernel};
use bec_pairing::presets::harmonic_trap;
use bec_pairing::{CMatrix, CVector, Field, Kernel, C64};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Real symmetric `(h, θ)` with `h - |θ| ≥ 1` on a random complement.
fn gapped(seed: u64, n: usize, coupling: f64) -> (CMatrix, CMatrix, CVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * (1.0 + coupling);
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let t = (&b + b.transpose()) * 0.5;
    let t = &t * (coupling / t.symmetric_eigenvalues().amax());
    let v = DVector::from_fn(n, |_, _| rng.gen_range(0.1..1.0));
    let c = |m: &DMatrix<f64>| -> CMatrix { m.map(C64::from) };
    let v: DVector<f64> = &v / v.norm();
    (c(&h), c(&t), v.map(C64::from))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bdg_kernel_solves_riccati_and_lowers_energy(seed in any::<u64>(), coupling in 0.0f64..0.95) {
        let (h, t, v) = gapped(seed, 8, coupling);
        let (h, t, phi) = (Kernel::from_frame(h), Kernel::from_frame(t), Field::from_frame(v));
        let sol = solve_bdg(&h, &t, &phi).unwrap();
        prop_assert!(sol.energies.iter().all(|e| *e > 0.0));
        let k = kernel_from_bdg(&sol, &phi).unwrap();
        prop_assert!(k.op_norm() < 1.0);
        prop_assert!(k.invariants().holds());
        prop_assert!(riccati_residual(k.values(), &h, &t, &phi) < 1e-9);
        // the Riccati root is the minimizer: never above the k = 0 value
        prop_assert!(trace_energy(&k, &h, &t).unwrap() <= 1e-14);
    }

    #[test]
    fn main_path_matches_brute_force(seed in any::<u64>(), coupling in 0.0f64..0.9) {
        let (h, t, v) = gapped(seed, 7, coupling);
        let phi = Field::from_frame(v.clone());
        let sol = solve_bdg(&Kernel::from_frame(h.clone()), &Kernel::from_frame(t.clone()), &phi).unwrap();
        let k = kernel_from_bdg(&sol, &phi).unwrap();
        let vr = DVector::from_iterator(v.len(), v.iter().map(|z| z.re));
        let bf = brute_force_block_diag(&real_part(&h).unwrap(), &real_part(&t).unwrap(), Some(&vr)).unwrap();
        prop_assert!((k.frame().map(|z| z.re) - &bf.k).amax() < 1e-9);
        for (a, b) in sol.energies.iter().zip(&bf.spectrum) {
            prop_assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn energy_forms_agree(seed in any::<u64>(), norm in 0.0f64..0.95, center in -1.0f64..1.0) {
        let model = harmonic_trap(1, 6.0, 20, 0.5, 1.0 / 6.0, 50).unwrap();
        let phi = model.grid.real_field_from_fn(|x| (-(x[0] - center).powi(2)).exp()).normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = model.len();
        let raw = CMatrix::from_fn(n, n, |_, _| C64::from(rng.gen_range(-1.0..1.0) / n as f64));
        let k = project_offcondensate(&Kernel::from_frame(raw), &phi).unwrap();
        let k = PairKernel::from_parts(Kernel::from_frame(k.frame() * C64::from(norm / op_norm(k.frame()).max(1e-300))), &phi).unwrap();
        let e = total_energy(&model, &phi, &k).unwrap().e_total;
        let tilde = psi_form_energy(&model, &phi, &psi_transform(&k).unwrap()).unwrap() / model.n();
        prop_assert!((e - tilde).abs() <= 1e-8 * e.abs());
    }

    #[test]
    fn config_echo_round_trips(
        extent in 1.0f64..20.0,
        points in 4usize..200,
        g in 0.0f64..5.0,
        beta in 0.0f64..=1.0,
        n in 1u64..1_000_000,
    ) {
        let src = format!("[grid]\nextent = {extent:?}\npoints = {points}\n[potential]\ng = {g:?}\nbeta = {beta:?}\nn_particles = {n}\n");
        let c = parse_config_str(&src).unwrap();
        prop_assert_eq!(parse_config_str(&c.to_toml()).unwrap(), c.clone());
        prop_assert_eq!(c.warnings().is_empty(), beta <= 1.0 / 6.0);
    }
}
