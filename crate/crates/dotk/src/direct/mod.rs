//! Direct (non-iterative) reconstruction formulas: 1D Laplace inversion in
//! the backscattering geometry, Fourier-Laplace inversion in the half-space,
//! the inverse Born series, and the broken-ray Radon transform.

pub mod born;
pub mod broken_ray;
pub mod halfspace;
pub mod laplace;

pub use born::{
    convergence_radius, inverse_born_series, BornOperators, BornSystem, ConvergenceConstants,
    FemBornSystem, RegularizedPinv, SeriesState,
};
pub use broken_ray::{broken_ray_forward, broken_ray_invert, BrokenRayGeometry, SlabGrid};
pub use halfspace::{fl_halfspace_invert, HalfSpaceGrid, HalfSpaceReconstruction};
pub use laplace::{laplace_invert_1d, LaplaceInversion, SingularFilter};
