//! Spatial discretization, the weighted-frame field/kernel types, trap and
//! interaction potentials.
//!
//! Fields and kernels are stored in the weighted frame: a field with point
//! values `f_i` is stored as `sqrt(w_i) f_i`, a kernel with point values
//! `A_ij` as `sqrt(w_i) A_ij sqrt(w_j)`. In that frame operator composition is
//! a matrix product, the delta kernel is the identity and the quadrature trace
//! is the plain trace.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Periodic,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Dirichlet => "dirichlet",
            Boundary::Periodic => "periodic",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    dim: usize,
    extent: f64,
    points_per_axis: usize,
    boundary: Boundary,
    axis_nodes: Vec<f64>,
    axis_weights: Vec<f64>,
    coords: Vec<f64>,
    weights: Vec<f64>,
    sqrt_w: Vec<f64>,
}

pub fn build_grid(
    dim: usize,
    extent: f64,
    points_per_axis: usize,
    boundary: Boundary,
) -> Result<Grid> {
    Grid::new(dim, extent, points_per_axis, boundary)
}

impl Grid {
    pub fn new(dim: usize, extent: f64, points_per_axis: usize, boundary: Boundary) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid(format!("extent {extent} must be positive")));
        }
        if points_per_axis < 4 {
            return Err(Error::InvalidGrid(format!(
                "points_per_axis {points_per_axis} must be at least 4"
            )));
        }
        let n_ax = points_per_axis;
        let (axis_nodes, axis_weights) = match boundary {
            Boundary::Dirichlet => {
                let h = 2.0 * extent / (n_ax - 1) as f64;
                let nodes: Vec<f64> = (0..n_ax).map(|i| -extent + i as f64 * h).collect();
                let mut w = vec![h; n_ax];
                w[0] = 0.5 * h;
                w[n_ax - 1] = 0.5 * h;
                (nodes, w)
            }
            Boundary::Periodic => {
                let h = 2.0 * extent / n_ax as f64;
                let nodes: Vec<f64> = (0..n_ax).map(|i| -extent + i as f64 * h).collect();
                (nodes, vec![h; n_ax])
            }
        };
        let n = n_ax.pow(dim as u32);
        let mut coords = Vec::with_capacity(n * dim);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let mut w = 1.0;
            let mut rest = i;
            for _ in 0..dim {
                let ia = rest % n_ax;
                rest /= n_ax;
                coords.push(axis_nodes[ia]);
                w *= axis_weights[ia];
            }
            weights.push(w);
        }
        let sqrt_w = weights.iter().map(|w| w.sqrt()).collect();
        Ok(Grid {
            dim,
            extent,
            points_per_axis,
            boundary,
            axis_nodes,
            axis_weights,
            coords,
            weights,
            sqrt_w,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn extent(&self) -> f64 {
        self.extent
    }
    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }
    /// Total number of nodes, `n_ax^d`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn spacing(&self) -> f64 {
        self.axis_nodes[1] - self.axis_nodes[0]
    }
    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis_nodes
    }
    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_w
    }
    /// Volume of the box, `(2L)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * self.extent).powi(self.dim as i32)
    }

    /// Displacement `x_i - x_j`, wrapped to the minimum image on a torus.
    pub fn displacement(&self, i: usize, j: usize, out: &mut [f64]) {
        let period = 2.0 * self.extent;
        for a in 0..self.dim {
            let mut d = self.coords[i * self.dim + a] - self.coords[j * self.dim + a];
            if self.boundary == Boundary::Periodic {
                d -= period * (d / period).round();
            }
            out[a] = d;
        }
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let mut d = [0.0; 3];
        self.displacement(i, j, &mut d[..self.dim]);
        d[..self.dim].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn field_from_fn<F: FnMut(&[f64]) -> C64>(&self, mut f: F) -> Field {
        Field::from_point_values(self, &CVector::from_fn(self.len(), |i, _| f(self.node(i))))
    }

    pub fn real_field_from_fn<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Field {
        self.field_from_fn(|x| C64::new(f(x), 0.0))
    }
}

/// A one-particle function, stored in the weighted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    frame: CVector,
}

impl Field {
    pub fn from_frame(frame: CVector) -> Self {
        Field { frame }
    }
    pub fn from_point_values(grid: &Grid, values: &CVector) -> Self {
        let frame = CVector::from_fn(values.len(), |i, _| values[i] * grid.sqrt_w[i]);
        Field { frame }
    }
    pub fn zeros(n: usize) -> Self {
        Field { frame: CVector::zeros(n) }
    }
    pub fn frame(&self) -> &CVector {
        &self.frame
    }
    pub fn into_frame(self) -> CVector {
        self.frame
    }
    pub fn point_values(&self, grid: &Grid) -> CVector {
        CVector::from_fn(self.frame.len(), |i, _| self.frame[i] / grid.sqrt_w[i])
    }
    pub fn len(&self) -> usize {
        self.frame.len()
    }
    pub fn is_empty(&self) -> bool {
        self.frame.is_empty()
    }
    /// Quadrature L2 norm.
    pub fn norm(&self) -> f64 {
        self.frame.norm()
    }
    pub fn inner(&self, other: &Field) -> C64 {
        self.frame.dotc(&other.frame)
    }
    /// Unit-norm copy; the zero field is returned unchanged.
    pub fn normalized(&self) -> Field {
        let n = self.frame.norm();
        if n == 0.0 {
            return self.clone();
        }
        Field { frame: &self.frame / C64::from(n) }
    }
    /// Largest absolute imaginary part of the stored values.
    pub fn max_imag(&self) -> f64 {
        self.frame.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

/// A two-point function, stored in the weighted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    frame: CMatrix,
}

impl Kernel {
    pub fn from_frame(frame: CMatrix) -> Self {
        Kernel { frame }
    }
    pub fn from_point_values(grid: &Grid, values: &CMatrix) -> Self {
        let s = &grid.sqrt_w;
        Kernel { frame: CMatrix::from_fn(values.nrows(), values.ncols(), |i, j| values[(i, j)] * (s[i] * s[j])) }
    }
    pub fn zeros(n: usize) -> Self {
        Kernel { frame: CMatrix::zeros(n, n) }
    }
    pub fn identity(n: usize) -> Self {
        Kernel { frame: CMatrix::identity(n, n) }
    }
    pub fn frame(&self) -> &CMatrix {
        &self.frame
    }
    pub fn into_frame(self) -> CMatrix {
        self.frame
    }
    pub fn point_values(&self, grid: &Grid) -> CMatrix {
        let s = &grid.sqrt_w;
        CMatrix::from_fn(self.frame.nrows(), self.frame.ncols(), |i, j| self.frame[(i, j)] / (s[i] * s[j]))
    }
    pub fn len(&self) -> usize {
        self.frame.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.frame.is_empty()
    }
    pub fn apply(&self, f: &Field) -> Field {
        Field::from_frame(&self.frame * f.frame())
    }
    pub fn compose(&self, other: &Kernel) -> Kernel {
        Kernel { frame: &self.frame * &other.frame }
    }
    pub fn trace(&self) -> C64 {
        self.frame.trace()
    }
    /// Hilbert-Schmidt norm.
    pub fn hs_norm(&self) -> f64 {
        self.frame.norm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trap {
    /// `V(x) = strength * |x|^2`.
    Harmonic { strength: f64 },
    /// `V = 0`, for periodic boxes.
    Flat,
}

impl Trap {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Trap::Harmonic { strength } => strength * x.iter().map(|v| v * v).sum::<f64>(),
            Trap::Flat => 0.0,
        }
    }
}

/// Shape of the unscaled interaction `υ`, normalized so that `∫υ = g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Profile {
    Gaussian { width: f64 },
    /// Radial table `υ(r)`; linearly interpolated, zero past the last radius,
    /// rescaled to mass `g`.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    }
}

impl Profile {
    fn validate(&self) -> Result<()> {
        match self {
            Profile::Gaussian { width } => {
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::InvalidPotentials(format!("gaussian width {width} must be positive")));
                }
            }
            Profile::Tabulated { radii, values } => {
                if radii.len() < 2 || radii.len() != values.len() {
                    return Err(Error::InvalidPotentials(
                        "tabulated profile needs at least two (radius, value) pairs of equal length".into(),
                    ));
                }
                if radii[0] != 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidPotentials(
                        "tabulated radii must start at 0 and increase strictly".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidPotentials("tabulated values must be finite".into()));
                }
            }
        }
        Ok(())
    }

    fn raw(&self, r: f64, dim: usize) -> f64 {
        match self {
            Profile::Gaussian { width } => {
                let s2 = width * width;
                (2.0 * std::f64::consts::PI * s2).powf(-(dim as f64) / 2.0) * (-r * r / (2.0 * s2)).exp()
            }
            Profile::Tabulated { radii, values } => {
                let last = radii.len() - 1;
                if r >= radii[last] {
                    return if r == radii[last] { values[last] } else { 0.0 };
                }
                let k = radii.partition_point(|&x| x <= r) - 1;
                let t = (r - radii[k]) / (radii[k + 1] - radii[k]);
                values[k] * (1.0 - t) + values[k + 1] * t
            }
        }
    }

    /// `∫ raw dx` in `dim` dimensions.
    fn raw_mass(&self, dim: usize) -> f64 {
        match self {
            Profile::Gaussian { .. } => 1.0,
            Profile::Tabulated { radii, .. } => {
                let sub = 64;
                let mut total = 0.0;
                for w in radii.windows(2) {
                    let h = (w[1] - w[0]) / sub as f64;
                    for s in 0..=sub {
                        let r = w[0] + s as f64 * h;
                        let c = if s == 0 || s == sub { 0.5 } else { 1.0 };
                        total += c * h * self.raw(r, dim) * r.powi(dim as i32 - 1);
                    }
                }
                sphere_area(dim) * total
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Potentials {
    pub v_trap: DVector<f64>,
    pub trap: Trap,
    pub profile: Profile,
    pub g: f64,
    pub beta: f64,
    pub n_particles: u64,
    mass_scale: f64,
    dim: usize,
}

impl Potentials {
    pub fn new(grid: &Grid, trap: Trap, profile: Profile, g: f64, beta: f64, n_particles: u64) -> Result<Self> {
        profile.validate()?;
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::InvalidPotentials(format!("coupling g = {g} must be nonnegative")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidPotentials(format!("beta = {beta} outside [0,1]")));
        }
        if n_particles < 1 {
            return Err(Error::InvalidPotentials("particle number must be at least 1".into()));
        }
        let v_trap = DVector::from_fn(grid.len(), |i, _| trap.value(grid.node(i)));
        if v_trap.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidPotentials("trap potential must be finite and nonnegative".into()));
        }
        let mass = profile.raw_mass(grid.dim());
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidPotentials(format!("profile mass {mass} must be positive")));
        }
        Ok(Potentials { v_trap, trap, profile, g, beta, n_particles, mass_scale: g / mass, dim: grid.dim() })
    }

    pub fn n(&self) -> f64 {
        self.n_particles as f64
    }

    /// Unscaled `υ(r)` with `∫υ = g`.
    pub fn upsilon(&self, r: f64) -> f64 {
        self.mass_scale * self.profile.raw(r, self.dim)
    }

    /// `υ_N(r) = N^{dβ} υ(N^β r)`.
    pub fn upsilon_n(&self, r: f64) -> f64 {
        let s = self.n().powf(self.beta);
        s.powi(self.dim as i32) * self.upsilon(s * r)
    }

    /// Analytic Fourier transform of `υ_N` (Gaussian profile only).
    pub fn upsilon_n_hat(&self, p2: f64) -> Option<f64> {
        match self.profile {
            Profile::Gaussian { width } => {
                let s = self.n().powf(self.beta);
                Some(self.g * (-width * width * p2 / (2.0 * s * s)).exp())
            }
            Profile::Tabulated { .. } => None,
        }
    }

    fn length_scale(&self) -> f64 {
        match &self.profile {
            Profile::Gaussian { width } => *width,
            Profile::Tabulated { radii, .. } => *radii.last().unwrap(),
        }
    }
}

/// Discrete `-Δ` in the weighted frame.
///
/// Built from the symmetric stiffness matrix `(1/h) tridiag(-1, 2, -1)` per
/// axis (wrapped for periodic grids, ghost zeros for Dirichlet), so the
/// result is symmetric and positive semidefinite.
pub fn kinetic_operator(grid: &Grid) -> Kernel {
    Kernel::from_frame(kinetic_frame(grid).map(C64::from))
}

pub(crate) fn kinetic_frame(grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let n_ax = grid.points_per_axis;
    let h = grid.spacing();
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut stride = 1;
    for _ in 0..grid.dim {
        for i in 0..n {
            let ia = (i / stride) % n_ax;
            let wa = grid.axis_weights[ia];
            k[(i, i)] += 2.0 / (h * wa);
            let mut couple = |ja: usize| {
                let j = i - ia * stride + ja * stride;
                let wb = grid.axis_weights[ja];
                k[(i, j)] -= 1.0 / (h * (wa * wb).sqrt());
            };
            match grid.boundary {
                Boundary::Dirichlet => {
                    if ia > 0 {
                        couple(ia - 1);
                    }
                    if ia + 1 < n_ax {
                        couple(ia + 1);
                    }
                }
                Boundary::Periodic => {
                    couple((ia + n_ax - 1) % n_ax);
                    couple((ia + 1) % n_ax);
                }
            }
        }
        stride *= n_ax;
    }
    k
}

/// Point values `υ_N(x_i - x_j)`.
#[derive(Clone, Debug)]
pub struct Interaction {
    values: DMatrix<f64>,
    pub warnings: Vec<String>,
}

pub fn build_interaction(grid: &Grid, potentials: &Potentials) -> Interaction {
    let n = grid.len();
    let mut values = DMatrix::<f64>::zeros(n, n);
    if potentials.g > 0.0 {
        for j in 0..n {
            for i in j..n {
                let v = potentials.upsilon_n(grid.distance(i, j));
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
    }
    let mut warnings = Vec::new();
    let resolution = potentials.n().powf(potentials.beta) * grid.spacing() / potentials.length_scale();
    if potentials.g > 0.0 && resolution > 1.0 {
        let msg = format!(
            "interaction unresolved: N^beta * h / range = {resolution:.3} > 1; results are discretization-limited"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Interaction { values, warnings }
}

impl Interaction {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// The convolution kernel `υ_N(x-y)` in the weighted frame.
    pub fn kernel(&self, grid: &Grid) -> Kernel {
        Kernel::from_point_values(grid, &self.values.map(C64::from))
    }

    /// Entrywise product `υ_N(x-y) A(x,y)`; works directly in the frame.
    pub fn times(&self, a: &CMatrix) -> CMatrix {
        a.zip_map(&self.values, |z, u| z * u)
    }

    /// `(υ_N * ρ)(x_i)` from the weighted density `w_j ρ_j`.
    pub fn convolve(&self, weighted_density: &DVector<f64>) -> DVector<f64> {
        &self.values * weighted_density
    }
}

/// Grid, potentials and the operators derived from them, built once.
#[derive(Clone, Debug)]
pub struct Model {
    pub grid: Grid,
    pub potentials: Potentials,
    pub interaction: Interaction,
    one_body: CMatrix,
}

impl Model {
    pub fn new(grid: Grid, potentials: Potentials) -> Result<Self> {
        if potentials.v_trap.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "trap has {} values for {} nodes",
                potentials.v_trap.len(),
                grid.len()
            )));
        }
        let mut one_body = kinetic_frame(&grid);
        for i in 0..grid.len() {
            one_body[(i, i)] += potentials.v_trap[i];
        }
        let interaction = build_interaction(&grid, &potentials);
        Ok(Model { one_body: one_body.map(C64::from), grid, potentials, interaction })
    }

    /// `-Δ + V_trap` in the weighted frame.
    pub fn one_body(&self) -> &CMatrix {
        &self.one_body
    }
    pub fn n(&self) -> f64 {
        self.potentials.n()
    }
    pub fn len(&self) -> usize {
        self.grid.len()
    }
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
    pub fn warnings(&self) -> &[String] {
        &self.interaction.warnings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_model(grid: Grid, g: f64, beta: f64, n: u64) -> Model {
        let pot = Potentials::new(&grid, Trap::Harmonic { strength: 1.0 }, Profile::Gaussian { width: 1.0 }, g, beta, n)
            .unwrap();
        Model::new(grid, pot).unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = build_grid(1, 10.0, 64, Boundary::Dirichlet).unwrap();
        assert_eq!(g.len(), 64);
        assert_relative_eq!(g.spacing(), 20.0 / 63.0, epsilon = 1e-14);
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 20.0, epsilon = 1e-12);

        let g = build_grid(1, std::f64::consts::PI, 32, Boundary::Periodic).unwrap();
        assert_eq!(g.len(), 32);
        for w in g.weights() {
            assert_relative_eq!(*w, 2.0 * std::f64::consts::PI / 32.0, epsilon = 1e-15);
        }

        let g = build_grid(2, 5.0, 16, Boundary::Dirichlet).unwrap();
        assert_eq!(g.len(), 256);
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 100.0, epsilon = 1e-10);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(build_grid(1, 1.0, 3, Boundary::Dirichlet).is_err());
        assert!(build_grid(1, 0.0, 8, Boundary::Dirichlet).is_err());
        assert!(build_grid(1, -1.0, 8, Boundary::Periodic).is_err());
        assert!(build_grid(4, 1.0, 8, Boundary::Periodic).is_err());
    }

    #[test]
    fn frame_round_trip() {
        let grid = build_grid(2, 3.0, 6, Boundary::Dirichlet).unwrap();
        let f = grid.field_from_fn(|x| C64::new(x[0], x[1] * x[1]));
        let back = Field::from_point_values(&grid, &f.point_values(&grid));
        assert!((back.frame() - f.frame()).norm() < 1e-15);
        let m = CMatrix::from_fn(grid.len(), grid.len(), |i, j| C64::new(i as f64, j as f64));
        let k = Kernel::from_point_values(&grid, &m);
        assert!((k.point_values(&grid) - m).norm() < 1e-12);
    }

    #[test]
    fn laplacian_of_constant_is_zero_on_torus() {
        let grid = build_grid(1, 2.0, 32, Boundary::Periodic).unwrap();
        let k = kinetic_operator(&grid);
        let f = grid.real_field_from_fn(|_| 1.0);
        assert!(k.apply(&f).norm() < 1e-12);
    }

    #[test]
    fn laplacian_sine_eigenfunction() {
        let grid = build_grid(1, std::f64::consts::PI, 256, Boundary::Periodic).unwrap();
        let k = kinetic_operator(&grid);
        let f = grid.real_field_from_fn(|x| x[0].sin());
        let kf = k.apply(&f);
        let err = (kf.frame() - f.frame()).norm() / f.norm();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn laplacian_psd_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dim, b) in [(1, Boundary::Dirichlet), (1, Boundary::Periodic), (2, Boundary::Dirichlet)] {
            let grid = build_grid(dim, 4.0, 8, b).unwrap();
            let k = kinetic_operator(&grid);
            for _ in 0..50 {
                let f = grid.real_field_from_fn(|_| rng.gen_range(-1.0..1.0));
                let g = grid.real_field_from_fn(|_| rng.gen_range(-1.0..1.0));
                assert!(f.inner(&k.apply(&f)).re >= -1e-12);
                let lhs = f.inner(&k.apply(&g));
                let rhs = k.apply(&f).inner(&g);
                assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
            }
        }
    }

    #[test]
    fn oscillator_lowest_eigenvalue() {
        let grid = build_grid(1, 10.0, 256, Boundary::Dirichlet).unwrap();
        let model = gaussian_model(grid, 0.0, 0.0, 1);
        let re = model.one_body().map(|z| z.re);
        let e = re.symmetric_eigenvalues().min();
        assert!((e - 1.0).abs() < 2e-3, "{e}");
    }

    #[test]
    fn interaction_mass_preserved() {
        let grid = build_grid(1, 10.0, 256, Boundary::Dirichlet).unwrap();
        for beta in [0.0, 1.0 / 6.0, 1.0 / 3.0] {
            let model = gaussian_model(grid.clone(), 2.0, beta, 100);
            let u = model.interaction.values();
            let i = grid.len() / 2;
            let mass: f64 = (0..grid.len()).map(|j| grid.weights()[j] * u[(i, j)]).sum();
            assert_relative_eq!(mass, 2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn interaction_beta_zero_independent_of_n() {
        let grid = build_grid(1, 5.0, 16, Boundary::Periodic).unwrap();
        let a = gaussian_model(grid.clone(), 1.0, 0.0, 1);
        let b = gaussian_model(grid, 1.0, 0.0, 10_000);
        assert_eq!(a.interaction.values(), b.interaction.values());
    }

    #[test]
    fn interaction_is_weighted_symmetric() {
        let grid = build_grid(2, 3.0, 6, Boundary::Periodic).unwrap();
        let model = gaussian_model(grid.clone(), 1.0, 1.0 / 6.0, 100);
        let k = model.interaction.kernel(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = grid.real_field_from_fn(|_| rng.gen_range(-1.0..1.0));
        let g = grid.real_field_from_fn(|_| rng.gen_range(-1.0..1.0));
        let lhs = f.inner(&k.apply(&g));
        let rhs = k.apply(&f).inner(&g);
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm());
    }

    #[test]
    fn gaussian_transform_at_zero_is_g() {
        let grid = build_grid(1, 10.0, 64, Boundary::Periodic).unwrap();
        let pot = Potentials::new(&grid, Trap::Flat, Profile::Gaussian { width: 0.7 }, 1.3, 0.25, 50).unwrap();
        assert_relative_eq!(pot.upsilon_n_hat(0.0).unwrap(), 1.3, epsilon = 1e-15);
        // numerical transform at p = 0 by quadrature
        let h = 1e-3;
        let mass: f64 = (-20000..=20000).map(|i| h * pot.upsilon_n((i as f64 * h).abs())).sum();
        assert_relative_eq!(mass, 1.3, epsilon = 1e-9);
    }

    #[test]
    fn tabulated_profile_normalized() {
        let grid = build_grid(1, 10.0, 512, Boundary::Dirichlet).unwrap();
        let radii: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = radii.iter().map(|r| (4.0 - r).max(0.0)).collect();
        let pot = Potentials::new(&grid, Trap::Flat, Profile::Tabulated { radii, values }, 0.5, 0.0, 1).unwrap();
        let h = 1e-4;
        let mass: f64 = (-40000..=40000).map(|i| h * pot.upsilon((i as f64 * h).abs())).sum();
        assert_relative_eq!(mass, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn unresolved_interaction_warns() {
        let grid = build_grid(1, 10.0, 16, Boundary::Dirichlet).unwrap();
        let model = gaussian_model(grid, 1.0, 1.0, 100);
        assert!(!model.warnings().is_empty());
    }

    #[test]
    fn potentials_validation() {
        let grid = build_grid(1, 1.0, 8, Boundary::Dirichlet).unwrap();
        let gauss = Profile::Gaussian { width: 1.0 };
        assert!(Potentials::new(&grid, Trap::Flat, gauss.clone(), 1.0, 2.0, 1).is_err());
        assert!(Potentials::new(&grid, Trap::Flat, gauss.clone(), -1.0, 0.0, 1).is_err());
        assert!(Potentials::new(&grid, Trap::Flat, gauss.clone(), 1.0, 0.0, 0).is_err());
        assert!(Potentials::new(&grid, Trap::Harmonic { strength: -1.0 }, gauss, 1.0, 0.0, 1).is_err());
    }
}
