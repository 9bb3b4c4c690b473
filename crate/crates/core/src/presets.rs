//! Ready-made models used by the CLI defaults, the examples and the tests.

use crate::error::Result;
use crate::grid::{build_grid, Boundary, Model, Potentials, Profile, Trap};

/// `V = |x|^2` on a Dirichlet box with a unit-width Gaussian interaction.
pub fn harmonic_trap(dim: usize, extent: f64, points: usize, g: f64, beta: f64, n_particles: u64) -> Result<Model> {
    let grid = build_grid(dim, extent, points, Boundary::Dirichlet)?;
    let pot = Potentials::new(
        &grid,
        Trap::Harmonic { strength: 1.0 },
        Profile::Gaussian { width: 1.0 },
        g,
        beta,
        n_particles,
    )?;
    Model::new(grid, pot)
}

/// Translation-invariant gas on a periodic box, `V = 0`.
pub fn uniform_gas(dim: usize, extent: f64, points: usize, g: f64, beta: f64, n_particles: u64) -> Result<Model> {
    let grid = build_grid(dim, extent, points, Boundary::Periodic)?;
    let pot = Potentials::new(&grid, Trap::Flat, Profile::Gaussian { width: 1.0 }, g, beta, n_particles)?;
    Model::new(grid, pot)
}

/// The reference trapped problem: d = 1, L = 8, 64 nodes, g = 0.1, β = 1/6.
pub fn standard_problem(n_particles: u64) -> Result<Model> {
    harmonic_trap(1, 8.0, 64, 0.1, 1.0 / 6.0, n_particles)
}
