//! On-disk formats: binary field/kernel blobs with TOML sidecars, CSV tables,
//! manifests and checkpoints.
//!
//! Blobs hold weighted-frame values (`√w f`, `√w A √w`) so a reloaded state
//! is bit-identical to the one written. Layout: row-major little-endian
//! `f64`, the full real plane followed by the full imaginary plane.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bdg::BdgSolution;
use crate::error::Error;
use crate::grid::{Boundary, CMatrix, Field, Grid, Kernel, C64};
use crate::pair_kernel::{densities_from_kernel, PairKernel};
use crate::scf::{HistoryRow, Resume, SolverState};

pub const REPRESENTATION: &str = "weighted-frame";
pub const LAYOUT: &str = "row-major little-endian f64, real plane then imaginary plane";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: digest mismatch (expected {expected}, found {found})")]
    Digest { path: PathBuf, expected: String, found: String },
    #[error("{path}: {source}")]
    State {
        path: PathBuf,
        #[source]
        source: Error,
    },
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> IoResult<()> {
    fs::write(path, bytes).map_err(fs_err(path))
}

pub fn read_text(path: &Path) -> IoResult<String> {
    fs::read_to_string(path).map_err(fs_err(path))
}

pub fn create_dir(path: &Path) -> IoResult<()> {
    fs::create_dir_all(path).map_err(fs_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Digest of the quadrature weights; ties a blob to its grid.
pub fn weights_digest(grid: &Grid) -> String {
    let bytes: Vec<u8> = grid.weights().iter().flat_map(|w| w.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

/// Seventeen significant digits: exact round trip for `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn encode_matrix(m: &CMatrix) -> Vec<u8> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(16 * r * c);
    for plane in [|z: C64| z.re, |z: C64| z.im] {
        for i in 0..r {
            for j in 0..c {
                out.extend_from_slice(&plane(m[(i, j)]).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8], rows: usize, cols: usize) -> Option<CMatrix> {
    let n = rows * cols;
    if bytes.len() != 16 * n {
        return None;
    }
    let at = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap());
    Some(CMatrix::from_fn(rows, cols, |i, j| C64::new(at(i * cols + j), at(n + i * cols + j))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobHeader {
    /// `field` or `kernel`.
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub extent: f64,
    pub points_per_axis: usize,
    pub boundary: Boundary,
    pub representation: String,
    pub layout: String,
    pub weights_sha256: String,
    pub sha256: String,
}

fn write_blob(dir: &Path, stem: &str, kind: &str, grid: &Grid, m: &CMatrix) -> IoResult<String> {
    let bytes = encode_matrix(m);
    let digest = sha256_hex(&bytes);
    let header = BlobHeader {
        kind: kind.into(),
        rows: m.nrows(),
        cols: m.ncols(),
        dim: grid.dim(),
        extent: grid.extent(),
        points_per_axis: grid.points_per_axis(),
        boundary: grid.boundary(),
        representation: REPRESENTATION.into(),
        layout: LAYOUT.into(),
        weights_sha256: weights_digest(grid),
        sha256: digest.clone(),
    };
    write_file(&dir.join(format!("{stem}.bin")), &bytes)?;
    let text = toml::to_string(&header).map_err(|e| format_err(dir, e.to_string()))?;
    write_file(&dir.join(format!("{stem}.toml")), text)?;
    Ok(digest)
}

fn read_blob(dir: &Path, stem: &str, kind: &str, grid: &Grid) -> IoResult<CMatrix> {
    let head_path = dir.join(format!("{stem}.toml"));
    let header: BlobHeader =
        toml::from_str(&read_text(&head_path)?).map_err(|e| format_err(&head_path, e.message().to_string()))?;
    let n = grid.len();
    let cols = if kind == "field" { 1 } else { n };
    if header.kind != kind || header.rows != n || header.cols != cols {
        return Err(format_err(&head_path, format!("expected a {kind} of shape {n}x{cols}")));
    }
    if header.representation != REPRESENTATION {
        return Err(format_err(&head_path, format!("unsupported representation {}", header.representation)));
    }
    if header.weights_sha256 != weights_digest(grid) {
        return Err(format_err(&head_path, "written on a different grid"));
    }
    let path = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&path).map_err(fs_err(&path))?;
    let found = sha256_hex(&bytes);
    if found != header.sha256 {
        return Err(IoError::Digest { path, expected: header.sha256, found });
    }
    decode_matrix(&bytes, n, cols).ok_or_else(|| format_err(&path, "wrong length"))
}

/// Writes `<stem>.bin` and `<stem>.toml`; returns the blob digest.
pub fn write_field(dir: &Path, stem: &str, grid: &Grid, f: &Field) -> IoResult<String> {
    let m = CMatrix::from_column_slice(f.len(), 1, f.frame().as_slice());
    write_blob(dir, stem, "field", grid, &m)
}

pub fn read_field(dir: &Path, stem: &str, grid: &Grid) -> IoResult<Field> {
    let m = read_blob(dir, stem, "field", grid)?;
    Ok(Field::from_frame(m.column(0).into_owned()))
}

pub fn write_kernel(dir: &Path, stem: &str, grid: &Grid, k: &Kernel) -> IoResult<String> {
    write_blob(dir, stem, "kernel", grid, k.frame())
}

pub fn read_kernel(dir: &Path, stem: &str, grid: &Grid) -> IoResult<Kernel> {
    Ok(Kernel::from_frame(read_blob(dir, stem, "kernel", grid)?))
}

const HISTORY_HEADER: &str = "n,mu,e_total,riccati_resid,phi_resid,gap,k_hs,drift";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let vals = [r.mu, r.e_total, r.riccati_resid, r.phi_resid, r.gap, r.k_hs, r.drift];
        let _ = writeln!(out, "{},{}", r.n, vals.map(fmt17).join(","));
    }
    out
}

pub fn parse_history_csv(text: &str, path: &Path) -> IoResult<Vec<HistoryRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(format_err(path, "unexpected history header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let bad = || format_err(path, format!("malformed row `{l}`"));
            if cols.len() != 8 {
                return Err(bad());
            }
            let n = cols[0].parse().map_err(|_| bad())?;
            let mut v = [0.0; 7];
            for (slot, c) in v.iter_mut().zip(&cols[1..]) {
                *slot = c.parse().map_err(|_| bad())?;
            }
            Ok(HistoryRow {
                n,
                mu: v[0],
                e_total: v[1],
                riccati_resid: v[2],
                phi_resid: v[3],
                gap: v[4],
                k_hs: v[5],
                drift: v[6],
            })
        })
        .collect()
}

/// `j, E_j, ‖u_j‖² - ‖p_j‖² - 1`.
pub fn spectrum_csv(sol: &BdgSolution) -> String {
    let mut out = String::from("j,energy,norm_defect\n");
    for (j, (e, d)) in sol.energies.iter().zip(&sol.norm_defects).enumerate() {
        let _ = writeln!(out, "{j},{},{}", fmt17(*e), fmt17(*d));
    }
    out
}

/// Point values on the grid: node coordinates, `φ`, `|φ|²` and `ρ^pair`.
pub fn densities_csv(grid: &Grid, phi: &Field, k: &PairKernel) -> crate::error::Result<String> {
    let axes = ["x", "y", "z"];
    let mut out = String::from("i,");
    for a in &axes[..grid.dim()] {
        out.push_str(a);
        out.push(',');
    }
    out.push_str("phi_re,phi_im,rho_condensate,rho_pair\n");
    let pv = phi.point_values(grid);
    let rho_pair = densities_from_kernel(k)?.rho_pair(grid);
    for i in 0..grid.len() {
        let _ = write!(out, "{i},");
        for x in grid.node(i) {
            let _ = write!(out, "{},", fmt17(*x));
        }
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt17(pv[i].re),
            fmt17(pv[i].im),
            fmt17(pv[i].norm_sqr()),
            fmt17(rho_pair[i])
        );
    }
    Ok(out)
}

/// Everything needed to restart an iterative solve at one accepted iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub iterate_index: usize,
    pub mu: f64,
    pub damping: f64,
    pub e_total: f64,
    pub riccati_resid: f64,
    pub phi_resid: f64,
    pub gap: f64,
    pub k_hs: f64,
    pub files: BTreeMap<String, String>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.toml";

pub fn checkpoint_dir(out_dir: &Path, index: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("iter_{index:04}"))
}

pub fn write_checkpoint(out_dir: &Path, grid: &Grid, state: &SolverState, history: &[HistoryRow]) -> IoResult<PathBuf> {
    let dir = checkpoint_dir(out_dir, state.iterate_index);
    create_dir(&dir)?;
    let mut files = BTreeMap::new();
    files.insert("phi.bin".to_string(), write_field(&dir, "phi", grid, &state.phi)?);
    files.insert("k.bin".to_string(), write_kernel(&dir, "k", grid, state.k.values())?);
    let hist = history_csv(history);
    files.insert("history.csv".to_string(), sha256_hex(hist.as_bytes()));
    write_file(&dir.join("history.csv"), &hist)?;
    let m = CheckpointManifest {
        iterate_index: state.iterate_index,
        mu: state.mu,
        damping: state.damping,
        e_total: state.energy.e_total,
        riccati_resid: state.riccati_resid,
        phi_resid: state.phi_resid,
        gap: state.gap,
        k_hs: state.k.hs_norm(),
        files,
    };
    let text = toml::to_string(&m).map_err(|e| format_err(&dir, e.to_string()))?;
    write_file(&dir.join(CHECKPOINT_FILE), text)?;
    Ok(dir)
}

/// Accepts a checkpoint directory, or a run directory (the newest checkpoint
/// under `checkpoints/` is taken).
pub fn resolve_checkpoint(path: &Path) -> IoResult<PathBuf> {
    if path.join(CHECKPOINT_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    let root = path.join("checkpoints");
    let entries = fs::read_dir(&root).map_err(fs_err(&root))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CHECKPOINT_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.pop().ok_or_else(|| format_err(path, "no checkpoint found"))
}

pub fn load_checkpoint(path: &Path, grid: &Grid) -> IoResult<Resume> {
    let dir = resolve_checkpoint(path)?;
    let mpath = dir.join(CHECKPOINT_FILE);
    let m: CheckpointManifest =
        toml::from_str(&read_text(&mpath)?).map_err(|e| format_err(&mpath, e.message().to_string()))?;
    let phi = read_field(&dir, "phi", grid)?;
    let k = read_kernel(&dir, "k", grid)?;
    let hpath = dir.join("history.csv");
    let hist = read_text(&hpath)?;
    if let Some(expected) = m.files.get("history.csv") {
        let found = sha256_hex(hist.as_bytes());
        if &found != expected {
            return Err(IoError::Digest { path: hpath, expected: expected.clone(), found });
        }
    }
    let history = parse_history_csv(&hist, &hpath)?;
    let k = PairKernel::from_parts(k, &phi).map_err(|source| IoError::State { path: dir.clone(), source })?;
    Ok(Resume { phi, k, mu: m.mu, iterate_index: m.iterate_index, damping: m.damping, history })
}
