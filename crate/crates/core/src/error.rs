use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid potentials: {0}")]
    InvalidPotentials(String),
    #[error("pair kernel operator norm {0:.6e} is not below 1")]
    OpNormExceeded(f64),
    #[error("operator not Hermitian: deviation {0:.3e}")]
    HermiticityBroken(f64),
    #[error("{what} has imaginary part {imag:.3e} (value {value:.6e})")]
    NonReal {
        what: &'static str,
        value: f64,
        imag: f64,
    },
    #[error("gap condition violated: margin {0:.6e}")]
    GapViolated(f64),
    #[error("quasiparticle spectrum is complex: max imaginary part {0:.3e}")]
    ComplexSpectrum(f64),
    #[error("expected {expected} quasiparticle modes, found {found}")]
    NondiagonalizableBlock { expected: usize, found: usize },
    #[error("quasiparticle frame is singular: condition number {0:.3e}")]
    SingularFrame(f64),
    #[error("frame does not diagonalize h and theta: leakage {0:.3e}")]
    FrameNotCommuting(f64),
    #[error("lowest two eigenvalues differ by only {0:.3e}")]
    DegenerateGround(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("{0} requires real fields")]
    NotRealField(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Riccati residual {residual:.3e} above bound {bound:.3e}")]
    RiccatiResidual { residual: f64, bound: f64 },
    #[error("linear algebra failure: {0}")]
    LinAlg(String),
}

pub type Result<T> = std::result::Result<T, Error>;
