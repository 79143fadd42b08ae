//! Direct linearized inversion in the half-space z ≥ 0 from lattice data.
//!
//! Sources and detectors share an n×n lattice on the plane z = 0. The
//! scattering data Φ_s(ρ₁, ρ₂) are Fourier transformed in both arguments
//! (lattice DFT, e^{+i} convention, scaled by h⁴ so the result approximates
//! the continuum transform). Multiplying by (Q₁ℓ+1)(Q₂ℓ+1)(D₀/ℓ)² strips the
//! boundary factors of the plane-wave Green's function and leaves
//!
//!   ψ(q₁,q₂) = ∫ dz [κ_A(z) δμ̃_a(u,z) + κ_D(z) δD̃(u,z)],   u = q₁+q₂,
//!
//! with κ_A = c e^{-(Q₁+Q₂)z} and κ_D = -(q₁·q₂ + Q₁Q₂) e^{-(Q₁+Q₂)z},
//! Q = √(q²+k²). Data pairs therefore decouple by the wrapped sum u of
//! their transverse frequencies: for each u-cell the free relative frequency
//! plays the role of a Laplace variable probing depth. Per u we solve the
//! minimum-norm Tikhonov problem for the depth profiles and Fourier-invert
//! over u. Longitudinal resolution is poor by construction (the z-dependence
//! is a Laplace kernel); transverse resolution is set by the lattice.
//!
//! The per-u normal equations use the Gram matrix M(p,p') = ∫[κ_Aκ_A* +
//! κ_Dκ_D*]dz with M + αI regularization. Forming M row-by-row is quadratic
//! in lattice size, so the production path goes through the small dual system
//! (B̃ᴴB̃ + αI) y = B̃ᴴψ and recovers the M-form solution exactly via
//! c = (ψ - B̃y)/α, x = B_κᴴ c; a literal-M reference path backs the tests.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::{Error, Result};

/// Measurement lattice plus the depth samples of the reconstruction.
#[derive(Debug, Clone)]
pub struct HalfSpaceGrid {
    /// Lattice points per side (sources and detectors alike).
    pub n: usize,
    /// Lattice spacing (mm).
    pub h: f64,
    /// Depth samples (mm), strictly increasing, all positive.
    pub z: Vec<f64>,
}

impl HalfSpaceGrid {
    pub fn new(n: usize, h: f64, z: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "lattice needs at least 2 points per side, got {n}"
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lattice spacing {h} must be positive"
            )));
        }
        if z.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least two depth samples".into(),
            ));
        }
        for (j, &zj) in z.iter().enumerate() {
            if !(zj > 0.0) || !zj.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "depth sample {j} = {zj} must be positive"
                )));
            }
            if j > 0 && zj <= z[j - 1] {
                return Err(Error::InvalidArgument(
                    "depth samples must be strictly increasing".into(),
                ));
            }
        }
        Ok(HalfSpaceGrid { n, h, z })
    }

    pub fn n_pairs(&self) -> usize {
        self.n * self.n * self.n * self.n
    }

    /// Flat index of a (source, detector) pair; coordinates are (ix, iy).
    pub fn pair_index(&self, source: [usize; 2], detector: [usize; 2]) -> usize {
        let n = self.n;
        ((source[1] * n + source[0]) * n + detector[1]) * n + detector[0]
    }

    /// Flat voxel index of the reconstruction at lattice point (ix, iy),
    /// depth sample iz.
    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iy * self.n + ix) * self.z.len() + iz
    }
}

#[derive(Debug, Clone)]
pub struct HalfSpaceReconstruction {
    /// δμ_a at voxel_index order.
    pub delta_mu: Vec<f64>,
    /// δD at voxel_index order; all zeros when diffusion was excluded.
    pub delta_d: Vec<f64>,
    pub n: usize,
    pub nz: usize,
}

fn trapezoid_weights(z: &[f64]) -> Vec<f64> {
    let nz = z.len();
    let mut w = vec![0.0; nz];
    w[0] = 0.5 * (z[1] - z[0]);
    w[nz - 1] = 0.5 * (z[nz - 1] - z[nz - 2]);
    for j in 1..nz - 1 {
        w[j] = 0.5 * (z[j + 1] - z[j - 1]);
    }
    w
}

/// Transverse frequency of DFT bin m, folded into the symmetric zone.
fn bin_frequency(m: usize, n: usize, h: f64) -> f64 {
    let half = n / 2;
    let ms = if m <= half { m as i64 } else { m as i64 - n as i64 };
    2.0 * std::f64::consts::PI * ms as f64 / (n as f64 * h)
}

fn principal_q(q2: f64, k: Complex64) -> Complex64 {
    let arg = k * k + q2;
    if arg.norm() < 1e-30 {
        k
    } else {
        arg.sqrt()
    }
}

/// In-place DFT along every axis of the n^4 hypercube.
fn fft_hypercube(buf: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let n2 = n * n;
    let n3 = n2 * n;
    let strides = [n3, n2, n, 1];
    for (axis, &stride) in strides.iter().enumerate() {
        // Enumerate all lines along this axis: fix the other three digits.
        let others: Vec<usize> = strides
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != axis)
            .map(|(_, &s)| s)
            .collect();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let base = a * others[0] + b * others[1] + c * others[2];
                    for t in 0..n {
                        line[t] = buf[base + t * stride];
                    }
                    fft.process(&mut line);
                    for t in 0..n {
                        buf[base + t * stride] = line[t];
                    }
                }
            }
        }
    }
}

struct KernelRow {
    psi: Complex64,
    q1: [f64; 2],
    q2: [f64; 2],
    qq: Complex64, // Q(q1) + Q(q2)
}

/// Collects the kernel rows of one u-cell; rows whose absorption kernel
/// never exceeds 1e-12 in magnitude are dropped.
fn gather_rows(
    transformed: &[Complex64],
    grid: &HalfSpaceGrid,
    k: Complex64,
    d0: f64,
    ell: f64,
    c: f64,
    mu: [usize; 2],
) -> Vec<KernelRow> {
    let n = grid.n;
    let z0 = grid.z[0];
    let norm = (d0 / ell) * (d0 / ell);
    let mut rows = Vec::with_capacity(n * n);
    for m1y in 0..n {
        let m2y = (mu[1] + n - m1y) % n;
        for m1x in 0..n {
            let m2x = (mu[0] + n - m1x) % n;
            let q1 = [bin_frequency(m1x, n, grid.h), bin_frequency(m1y, n, grid.h)];
            let q2 = [bin_frequency(m2x, n, grid.h), bin_frequency(m2y, n, grid.h)];
            let qq1 = principal_q(q1[0] * q1[0] + q1[1] * q1[1], k);
            let qq2 = principal_q(q2[0] * q2[0] + q2[1] * q2[1], k);
            let qq = qq1 + qq2;
            if c * (-qq.re * z0).exp() < 1e-12 {
                continue;
            }
            let raw = transformed[((m1y * n + m1x) * n + m2y) * n + m2x];
            let psi = raw
                * (qq1 * ell + 1.0)
                * (qq2 * ell + 1.0)
                * norm;
            rows.push(KernelRow { psi, q1, q2, qq });
        }
    }
    rows
}

/// Solves one u-cell through the dual (small) system. Returns the stacked
/// depth profiles (absorption then, when enabled, diffusion).
fn solve_cell(
    rows: &[KernelRow],
    b_tilde: &DMatrix<Complex64>,
    sqrt_w: &[f64],
    alpha: f64,
    include_diffusion: bool,
    nz: usize,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let qc = b_tilde.ncols();
    let nr = rows.len();
    // G = B̃ᴴB̃ + αI and rhs = B̃ᴴψ.
    let mut g = DMatrix::<Complex64>::zeros(qc, qc);
    let mut rhs = nalgebra::DVector::<Complex64>::zeros(qc);
    for r in 0..nr {
        let psi = rows[r].psi;
        for i in 0..qc {
            let bi = b_tilde[(r, i)].conj();
            rhs[i] += bi * psi;
            for j in i..qc {
                g[(i, j)] += bi * b_tilde[(r, j)];
            }
        }
    }
    for i in 0..qc {
        g[(i, i)] += Complex64::new(alpha, 0.0);
        for j in 0..i {
            g[(i, j)] = g[(j, i)].conj();
        }
    }
    let chol = g.cholesky().expect("B̃ᴴB̃ + αI is Hermitian positive definite");
    let y = chol.solve(&rhs);

    // c = (ψ - B̃y)/α, then x = B_κᴴ c (undo the quadrature scaling).
    let mut x = vec![Complex64::new(0.0, 0.0); qc];
    for r in 0..nr {
        let mut by = Complex64::new(0.0, 0.0);
        for j in 0..qc {
            by += b_tilde[(r, j)] * y[j];
        }
        let cr = (rows[r].psi - by) / alpha;
        for j in 0..qc {
            x[j] += b_tilde[(r, j)].conj() * cr;
        }
    }
    let mut mu_prof = vec![Complex64::new(0.0, 0.0); nz];
    let mut d_prof = vec![Complex64::new(0.0, 0.0); nz];
    for j in 0..nz {
        mu_prof[j] = x[j] / sqrt_w[j];
        if include_diffusion {
            d_prof[j] = x[nz + j] / sqrt_w[j];
        }
    }
    (mu_prof, d_prof)
}

/// Recovers (δμ_a, δD) from half-space lattice data by the Fourier-Laplace
/// factorization. `data` holds Φ_s for every (source, detector) pair in
/// `pair_index` order; `k` is the background diffuse wavenumber, `d0` the
/// background diffusion coefficient, `ell` the extrapolation length and `c`
/// the speed of light in the medium. `alpha` is the Tikhonov level applied
/// to the per-u Gram matrix (kernel magnitudes are O(c), so alpha is
/// absolute in those units). With `include_diffusion` false only the
/// absorption kernel enters and `delta_d` comes back zero.
#[allow(clippy::too_many_arguments)]
pub fn fl_halfspace_invert(
    data: &[Complex64],
    grid: &HalfSpaceGrid,
    k: Complex64,
    d0: f64,
    ell: f64,
    c: f64,
    alpha: f64,
    include_diffusion: bool,
) -> Result<HalfSpaceReconstruction> {
    if data.len() != grid.n_pairs() {
        return Err(Error::InvalidArgument(format!(
            "expected {} data entries, got {}",
            grid.n_pairs(),
            data.len()
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tikhonov level {alpha} must be positive"
        )));
    }
    for (name, v) in [("d0", d0), ("ell", ell), ("c", c)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} = {v} must be positive")));
        }
    }
    let n = grid.n;
    let nz = grid.z.len();
    let w = trapezoid_weights(&grid.z);
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let h4 = grid.h.powi(4);

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft(n, FftDirection::Forward);
    let inv = planner.plan_fft(n, FftDirection::Inverse);

    let mut transformed: Vec<Complex64> = data.to_vec();
    fft_hypercube(&mut transformed, n, &inv);
    for v in transformed.iter_mut() {
        *v *= h4;
    }

    let qc = if include_diffusion { 2 * nz } else { nz };
    // Spectral profiles per u-cell, to be Fourier-inverted at the end.
    let mut spec_mu = vec![Complex64::new(0.0, 0.0); n * n * nz];
    let mut spec_d = vec![Complex64::new(0.0, 0.0); n * n * nz];

    let mut b_tilde = DMatrix::<Complex64>::zeros(n * n, qc);
    for muy in 0..n {
        for mux in 0..n {
            let rows = gather_rows(&transformed, grid, k, d0, ell, c, [mux, muy]);
            if rows.is_empty() {
                continue;
            }
            if b_tilde.nrows() != rows.len() {
                b_tilde = DMatrix::zeros(rows.len(), qc);
            }
            for (r, row) in rows.iter().enumerate() {
                let dot = row.q1[0] * row.q2[0] + row.q1[1] * row.q2[1];
                let q1n = principal_q(row.q1[0] * row.q1[0] + row.q1[1] * row.q1[1], k);
                let q2n = principal_q(row.q2[0] * row.q2[0] + row.q2[1] * row.q2[1], k);
                let dfac = -(Complex64::new(dot, 0.0) + q1n * q2n);
                for (j, &zj) in grid.z.iter().enumerate() {
                    let decay = (-row.qq * zj).exp();
                    b_tilde[(r, j)] = decay * c * sqrt_w[j];
                    if include_diffusion {
                        b_tilde[(r, nz + j)] = decay * dfac * sqrt_w[j];
                    }
                }
            }
            let (mu_prof, d_prof) =
                solve_cell(&rows, &b_tilde, &sqrt_w, alpha, include_diffusion, nz);
            let cell = muy * n + mux;
            for j in 0..nz {
                spec_mu[cell * nz + j] = mu_prof[j];
                spec_d[cell * nz + j] = d_prof[j];
            }
        }
    }

    // Transverse inverse transform per depth: e^{-i} direction, 1/(nh)².
    let scale = 1.0 / (n as f64 * grid.h).powi(2);
    let mut delta_mu = vec![0.0; n * n * nz];
    let mut delta_d = vec![0.0; n * n * nz];
    let mut plane = vec![Complex64::new(0.0, 0.0); n * n];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for (spec, out) in [(&spec_mu, &mut delta_mu), (&spec_d, &mut delta_d)] {
        for j in 0..nz {
            for cell in 0..n * n {
                plane[cell] = spec[cell * nz + j];
            }
            // rows then columns
            for y in 0..n {
                line.copy_from_slice(&plane[y * n..(y + 1) * n]);
                fwd.process(&mut line);
                plane[y * n..(y + 1) * n].copy_from_slice(&line);
            }
            for x in 0..n {
                for y in 0..n {
                    line[y] = plane[y * n + x];
                }
                fwd.process(&mut line);
                for y in 0..n {
                    plane[y * n + x] = line[y];
                }
            }
            for iy in 0..n {
                for ix in 0..n {
                    let v = plane[iy * n + ix].re * scale;
                    out[grid.voxel_index(ix, iy, j)] = v;
                }
            }
        }
    }

    Ok(HalfSpaceReconstruction {
        delta_mu,
        delta_d,
        n,
        nz,
    })
}
