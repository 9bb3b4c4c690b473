//! End-to-end runs of the binary: exit codes, output layout, error records.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bec_pairing::run::{ErrorRecord, Manifest, ERROR_FILE, INCOMPLETE_MARKER};

const STANDARD: &str = "[grid]\nextent = 8.0\npoints = 64\n\n[potential]\ng = 0.1\n";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bec-pairing"))
        .args(args)
        .args(["--log-level", "error"])
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn sub(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_g0_reports_oscillator_mu() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "g0.toml", "[grid]\nextent = 10.0\npoints = 256\n[potential]\ng = 0.0\n");
    let out = sub(tmp.path(), "out");
    let o = bin(&["solve", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, "complete");
    assert!((m.summary["mu"] - 1.0).abs() < 2e-3);
    assert_eq!(m.summary["k_hs"], 0.0);
    // defaults are echoed
    assert_eq!(m.config.potential.n_particles, 100);
    assert_eq!(m.config.criteria.tol_riccati, 1e-8);
    for f in ["history.csv", "spectrum.csv", "densities.csv", "phi.bin", "k.bin", "checkpoints"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(header.starts_with("n,mu,e_total,riccati_resid,phi_resid,gap"));
}

#[test]
fn hartree_then_bdg_step_on_g0_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "g0.toml", "[grid]\nextent = 10.0\npoints = 128\n[potential]\ng = 0.0\n");
    let h = sub(tmp.path(), "h");
    assert_eq!(bin(&["hartree", "--config", &cfg, "--out", s(&h)]).status.code(), Some(0));
    let ck = h.join("checkpoints").join("iter_0000");
    let b = sub(tmp.path(), "b");
    let o = bin(&["bdg-step", "--config", &cfg, "--out", s(&b), "--resume", s(&ck)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::load(&b).unwrap();
    assert_eq!(m.summary["k_hs"], 0.0);
    assert_eq!(m.summary["riccati_resid"], 0.0);
    assert!(b.join("k.bin").is_file() && b.join("spectrum.csv").is_file());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.toml", &STANDARD.replace("g = 0.1", "g = 0.1\nbeta = 2.0"));
    let o = bin(&["solve", "--config", &bad, "--out", s(&sub(tmp.path(), "x"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("beta: outside [0,1]"), "{err}");
    assert!(err.contains("kind = \"config\""), "{err}");
    // nothing computed, nothing written
    assert!(!tmp.path().join("x").exists());

    let unknown = write_config(tmp.path(), "unknown.toml", &format!("{STANDARD}shape = 1\n"));
    let o = bin(&["solve", "--config", &unknown]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape"));

    assert_eq!(bin(&["solve"]).status.code(), Some(2));
    assert_eq!(bin(&["solve", "--config", "/nonexistent/config.toml"]).status.code(), Some(2));
}

#[test]
fn beta_above_one_sixth_warns_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", "[grid]\nextent = 6.0\npoints = 24\n[potential]\ng = 0.1\nbeta = 0.3\n");
    let out = sub(tmp.path(), "out");
    bin(&["hartree", "--config", &cfg, "--out", s(&out)]);
    let m = Manifest::load(&out).unwrap();
    assert!(m.warnings.iter().any(|w| w.contains("outside iterative-convergence regime")));
}

#[test]
fn nonconvergence_exits_3_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "std.toml", STANDARD);
    let out = sub(tmp.path(), "out");
    let o = bin(&["solve", "--config", &cfg, "--out", s(&out), "--max-outer", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join(INCOMPLETE_MARKER).is_file());
    let rec: ErrorRecord = toml::from_str(&std::fs::read_to_string(out.join(ERROR_FILE)).unwrap()).unwrap();
    assert_eq!(rec.kind, "non_convergence");
    assert_eq!(rec.exit_code, 3);
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, "failed");
    // partial history is kept and the run can be continued
    let hist = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 3);
    let o = bin(&["solve", "--config", &cfg, "--out", s(&out), "--resume", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!out.join(INCOMPLETE_MARKER).exists() && !out.join(ERROR_FILE).exists());
    assert_eq!(Manifest::load(&out).unwrap().status, "complete");
}

#[test]
fn tol_override_reaches_the_solver() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "std.toml", STANDARD);
    let out = sub(tmp.path(), "out");
    assert_eq!(bin(&["solve", "--config", &cfg, "--out", s(&out), "--tol", "1e-4"]).status.code(), Some(0));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.config.criteria.tol_riccati, 1e-4);
    assert_eq!(m.summary["iterate_index"], 1.0);
}

#[test]
fn direct_backend_cannot_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", &format!("backend = \"direct\"\n{STANDARD}"));
    let o = bin(&["solve", "--config", &cfg, "--resume", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_one_directory_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "[grid]\nextent = 6.0\npoints = 24\n[potential]\ng = 0.1\n[sweep]\ng = [0.0, 0.1]\nn_particles = [100, 1000]\n";
    let cfg = write_config(tmp.path(), "sw.toml", body);
    let out = sub(tmp.path(), "sweep");
    let o = bin(&["sweep", "--config", &cfg, "--out", s(&out), "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    for d in ["g0_beta0.16666666666666666_N100", "g0.1_beta0.16666666666666666_N1000"] {
        let m = Manifest::load(&out.join(d)).unwrap();
        assert_eq!(m.status, "complete");
    }
    // the same sweep serially gives the same numbers
    let serial = sub(tmp.path(), "serial");
    assert_eq!(bin(&["sweep", "--config", &cfg, "--out", s(&serial)]).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(serial.join("summary.csv")).unwrap(), summary);
}

#[test]
fn validate_fresh_checkout_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sub(tmp.path(), "v");
    let o = bin(&["validate", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let oracle = std::fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert!(oracle.lines().skip(1).all(|l| l.ends_with(",true")));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.summary["failures"], 0.0);
}
