//! Diffuse optical tomography toolkit: frequency-domain diffusion FEM forward
//! modelling, sensitivity assembly, direct inversion formulas (Laplace,
//! Fourier-Laplace half-space, inverse Born series, broken-ray Radon), and a
//! catalog of linear/nonlinear regularized reconstruction algorithms with
//! Bayesian noise and prior modelling.
//!
//! Working units throughout: lengths in mm, time in ns, absorption in 1/mm,
//! diffusion coefficient in mm²/ns, modulation frequency in rad/ns.

// Public signatures use matrix and complex types from these crates; consumers
// need the exact same versions, so hand them out.
pub use nalgebra;
pub use num_complex;

pub mod bayes;
pub mod direct;
pub mod forward;
pub mod greens;
pub mod io;
pub mod linearize;
pub mod linsolve;
pub mod mesh;
pub mod optim;
pub mod shape;
pub mod sparse;
pub mod util;

/// Default light speed in tissue (0.3 mm/ps vacuum, refractive index 1.4), in mm/ns.
pub const DEFAULT_LIGHT_SPEED: f64 = 300.0 / 1.4;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("singular evaluation: {0}")]
    SingularEvaluation(String),
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("unsupported order: requested {requested}, supported up to {max}")]
    UnsupportedOrder { requested: usize, max: usize },
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
