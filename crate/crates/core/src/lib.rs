pub mod bdg;
pub mod config;
pub mod energy;
pub mod error;
pub mod grid;
pub mod hartree;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod oracle;
pub mod pair_kernel;
pub mod presets;
pub mod run;
pub mod scf;
pub mod validate;

pub use error::{Error, Result};
pub use grid::{build_grid, Boundary, CMatrix, CVector, Field, Grid, Kernel, Model, Potentials, Profile, Trap, C64};
