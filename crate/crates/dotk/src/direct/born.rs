//! Inverse Born series for continuous-wave absorption imaging.
//!
//! The scattered data admit a forward expansion Φ_s = K₁η + K₂η⊗η + ⋯ in
//! tensor powers of the absorption perturbation, where the i-th term chains
//! i background Green's operators through the perturbed region with
//! alternating sign, K_i = (-1)^{i+1} G ηG ⋯ ηG. Inverting the ansatz
//! η = 𝒦₁Φ_s + 𝒦₂Φ_s⊗Φ_s + ⋯ term by term fixes the coefficients
//! recursively,
//!
//!   𝒦₁ = K₁⁺,
//!   𝒦_j = -(Σ_{m<j} 𝒦_m Σ_{i₁+⋯+i_m=j} K_{i₁}⊗⋯⊗K_{i_m}) 𝒦₁⊗⋯⊗𝒦₁,
//!
//! so only the linear term is ever inverted; the higher orders are forward
//! evaluations. Storage of order-j tensors is avoided by evaluating the
//! recursion directly on the data vector: every tensor slot is occupied by
//! a concrete vector, so 𝒦_j Φ_s^{⊗j} reduces to nested multilinear
//! applications.
//!
//! Two operator backends are provided. [`BornSystem`] discretizes the
//! homogeneous-space kernels on a voxel grid and matches the setting in
//! which the convergence theory is stated. [`FemBornSystem`] uses the
//! finite-element background resolvent of a bounded domain, which is the
//! right Green's function when the data carry boundary physics.
//!
//! Convergence is governed by the constants μ and ν: the series converges
//! when ‖𝒦₁‖ and ‖𝒦₁Φ_s‖ are below 1/(μ+ν), which shrinks like (ka)^{-3/2}
//! for large ka.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::forward::{
    assemble_system, solve_adjoint, solve_forward, SourceDetectorLayout, SystemMatrix,
};
use crate::linearize::{assemble_jacobian, BornGeometry, BornKernels};
use crate::mesh::{Mesh, ParamField};
use crate::util::bessel_k1;
use crate::{Error, Result};

const MAX_ORDER: usize = 3;

/// Discretized forward scattering operators: the linear kernel as a dense
/// matrix plus the multilinear terms evaluated on concrete argument vectors.
/// Implementations fix their own (source, detector) row order; data handed to
/// [`inverse_born_series`] must use the same order.
pub trait BornOperators {
    fn n_pairs(&self) -> usize;
    fn n_params(&self) -> usize;
    fn pair_index(&self, source: usize, detector: usize) -> usize;
    fn k1_matrix(&self) -> DMatrix<f64>;
    /// K_i applied to i parameter-space arguments, i = args.len().
    fn forward_term(&self, args: &[DVector<f64>]) -> DVector<f64>;

    /// Partial sum of the forward series through the given order.
    fn forward_series(&self, eta: &[f64], orders: usize) -> Result<Vec<f64>> {
        if eta.len() != self.n_params() {
            return Err(Error::InvalidArgument(format!(
                "eta has {} entries, expected {}",
                eta.len(),
                self.n_params()
            )));
        }
        if orders == 0 {
            return Err(Error::InvalidArgument("need at least one order".into()));
        }
        let v = DVector::from_column_slice(eta);
        let mut acc = DVector::zeros(self.n_pairs());
        for i in 1..=orders {
            acc += self.forward_term(&vec![v.clone(); i]);
        }
        Ok(acc.as_slice().to_vec())
    }
}

/// Truncated-SVD pseudoinverse of the linearized forward matrix.
#[derive(Debug, Clone)]
pub struct RegularizedPinv {
    /// Relative singular-value cutoff that was applied.
    pub truncation: f64,
    /// Number of singular triplets kept.
    pub rank: usize,
    u: DMatrix<f64>,
    vt: DMatrix<f64>,
    inv_s: DVector<f64>,
}

impl RegularizedPinv {
    pub fn new(a: &DMatrix<f64>, truncation: f64) -> Result<Self> {
        if !(truncation > 0.0) || truncation >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "pinv truncation {truncation} must lie in (0, 1)"
            )));
        }
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if !(smax > 0.0) {
            return Err(Error::SingularSystem(
                "forward matrix has no nonzero singular values".into(),
            ));
        }
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] >= truncation * smax)
            .collect();
        let u_full = svd.u.as_ref().expect("svd with u");
        let vt_full = svd.v_t.as_ref().expect("svd with vt");
        let mut u = DMatrix::zeros(u_full.nrows(), keep.len());
        let mut vt = DMatrix::zeros(keep.len(), vt_full.ncols());
        let mut inv_s = DVector::zeros(keep.len());
        for (j, &i) in keep.iter().enumerate() {
            u.set_column(j, &u_full.column(i));
            vt.set_row(j, &vt_full.row(i));
            inv_s[j] = 1.0 / svd.singular_values[i];
        }
        Ok(RegularizedPinv {
            truncation,
            rank: keep.len(),
            u,
            vt,
            inv_s,
        })
    }

    /// x = V Σ⁻¹ Uᵀ b on the retained subspace.
    pub fn apply(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut coeff = self.u.transpose() * b;
        for i in 0..coeff.len() {
            coeff[i] *= self.inv_s[i];
        }
        self.vt.transpose() * coeff
    }
}

/// Voxel-grid Born operators in a homogeneous background: point sources and
/// detectors coupled through the reconstruction cells by the free-space
/// continuous-wave Green's function of the supplied kernels.
#[derive(Debug, Clone)]
pub struct BornSystem {
    pub voxels: Vec<[f64; 3]>,
    /// Cell measure: volume in 3D, area for planar kernels.
    pub voxel_volume: f64,
    pub k: f64,
    pub d0: f64,
    n_src: usize,
    n_det: usize,
    gs: DMatrix<f64>,
    gd: DMatrix<f64>,
    gmat: DMatrix<f64>,
}

impl BornSystem {
    /// The self-coupling of a cell integrates the Green's function over a
    /// ball (disk) of the same measure, divided by that measure.
    fn self_coupling(k: f64, d0: f64, measure: f64, geometry: BornGeometry) -> f64 {
        match geometry {
            BornGeometry::Infinite3d => {
                let r = (3.0 * measure / (4.0 * std::f64::consts::PI)).cbrt();
                (1.0 - (-k * r).exp() * (1.0 + k * r)) / (d0 * k * k) / measure
            }
            BornGeometry::Infinite2d => {
                let r = (measure / std::f64::consts::PI).sqrt();
                (1.0 - k * r * bessel_k1(k * r)) / (d0 * k * k) / measure
            }
        }
    }

    pub fn new(
        kernels: &BornKernels,
        sources: &[[f64; 3]],
        detectors: &[[f64; 3]],
        voxels: Vec<[f64; 3]>,
        voxel_volume: f64,
    ) -> Result<Self> {
        if sources.is_empty() || detectors.is_empty() || voxels.is_empty() {
            return Err(Error::InvalidArgument(
                "born system needs sources, detectors and voxels".into(),
            ));
        }
        if !(voxel_volume > 0.0) {
            return Err(Error::InvalidArgument("voxel volume must be positive".into()));
        }
        let kc = kernels.background.k;
        if kc.im != 0.0 || !(kc.re > 0.0) {
            return Err(Error::InvalidArgument(
                "series inversion needs a real positive wavenumber".into(),
            ));
        }
        let (k, d0) = (kc.re, kernels.background.d0);
        let (ns, nd, nv) = (sources.len(), detectors.len(), voxels.len());
        let mut gs = DMatrix::zeros(ns, nv);
        for (i, &s) in sources.iter().enumerate() {
            for (v, &y) in voxels.iter().enumerate() {
                gs[(i, v)] = kernels.greens(s, y)?.re;
            }
        }
        let mut gd = DMatrix::zeros(nv, nd);
        for (v, &y) in voxels.iter().enumerate() {
            for (i, &d) in detectors.iter().enumerate() {
                gd[(v, i)] = kernels.greens(y, d)?.re;
            }
        }
        let diag = Self::self_coupling(k, d0, voxel_volume, kernels.geometry);
        let mut gmat = DMatrix::zeros(nv, nv);
        for v in 0..nv {
            for w in 0..nv {
                gmat[(v, w)] = if v == w {
                    diag
                } else {
                    kernels.greens(voxels[v], voxels[w])?.re
                };
            }
        }
        Ok(BornSystem {
            voxels,
            voxel_volume,
            k,
            d0,
            n_src: ns,
            n_det: nd,
            gs,
            gd,
            gmat,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.n_src
    }

    pub fn n_detectors(&self) -> usize {
        self.n_det
    }
}

impl BornOperators for BornSystem {
    fn n_pairs(&self) -> usize {
        self.n_src * self.n_det
    }

    fn n_params(&self) -> usize {
        self.voxels.len()
    }

    /// Source-major: index = source·n_detectors + detector.
    fn pair_index(&self, source: usize, detector: usize) -> usize {
        source * self.n_det + detector
    }

    fn k1_matrix(&self) -> DMatrix<f64> {
        let (ns, nd, nv) = (self.n_src, self.n_det, self.n_params());
        let mut a = DMatrix::zeros(ns * nd, nv);
        for s in 0..ns {
            for d in 0..nd {
                for v in 0..nv {
                    a[(s * nd + d, v)] = self.gs[(s, v)] * self.gd[(v, d)] * self.voxel_volume;
                }
            }
        }
        a
    }

    /// (-1)^{i+1} ΔVⁱ Gs·diag(v₁)·G·diag(v₂)⋯G·diag(v_i)·Gd.
    fn forward_term(&self, args: &[DVector<f64>]) -> DVector<f64> {
        let i = args.len();
        assert!(i >= 1);
        // Right-to-left accumulation keeps every intermediate at n_vox×n_det.
        let mut m = self.gd.clone();
        for (v, (_, mut row)) in args[i - 1].iter().zip(m.row_iter_mut().enumerate()) {
            row *= *v;
        }
        for t in (0..i - 1).rev() {
            m = &self.gmat * m;
            for (v, (_, mut row)) in args[t].iter().zip(m.row_iter_mut().enumerate()) {
                row *= *v;
            }
        }
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        let scale = sign * self.voxel_volume.powi(i as i32);
        let full = &self.gs * m;
        let mut out = DVector::zeros(self.n_pairs());
        for s in 0..self.n_src {
            for d in 0..self.n_det {
                out[s * self.n_det + d] = scale * full[(s, d)];
            }
        }
        out
    }
}

/// Born operators built on the finite-element background resolvent of a
/// bounded domain. The parameter space is the nodal absorption perturbation
/// δμ_a; data are background-minus-perturbed boundary measurements, ordered
/// detector-major to match the assembled Jacobian rows.
pub struct FemBornSystem {
    system: SystemMatrix,
    k1: DMatrix<f64>,
    u_bar: Vec<Vec<f64>>,
    z_bar: Vec<Vec<f64>>,
    n_src: usize,
    n_det: usize,
}

impl FemBornSystem {
    /// Continuous-wave only: the multilinear chains are evaluated in real
    /// arithmetic, so a modulated background is rejected.
    pub fn new(
        mesh: &Mesh,
        background: &ParamField,
        layout: &SourceDetectorLayout,
        zeta: f64,
    ) -> Result<Self> {
        let system = assemble_system(mesh, background, 0.0, zeta)?;
        let fields = solve_forward(&system, layout)?;
        let adjoints = solve_adjoint(&system, layout)?;
        let jac = assemble_jacobian(mesh, background, layout, 0.0, zeta)?;
        let n = mesh.n_nodes();
        let (n_src, n_det) = (layout.n_sources(), layout.n_detectors());
        // Scattered data are background minus perturbed, so the linear term
        // is the negated absorption Jacobian.
        let mut k1 = DMatrix::zeros(jac.n_rows, n);
        for r in 0..jac.n_rows {
            for (kcol, v) in jac.mu_row(r).iter().enumerate() {
                k1[(r, kcol)] = -v.re;
            }
        }
        let real_part = |f: &crate::forward::ComplexField| -> Vec<f64> {
            f.values.iter().map(|v| v.re).collect()
        };
        Ok(FemBornSystem {
            system,
            k1,
            u_bar: fields.iter().map(real_part).collect(),
            z_bar: adjoints.iter().map(real_part).collect(),
            n_src,
            n_det,
        })
    }

    /// c·M(v)·x where M(v) is the mass matrix weighted by the nodal field v.
    fn weighted_mass_apply(&self, v: &DVector<f64>, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut out = vec![0.0; n];
        for k in 0..n {
            let vk = v[k];
            if vk == 0.0 {
                continue;
            }
            for &(i, j, w) in &self.system.deriv_mu[k] {
                out[i as usize] += vk * w * x[j as usize];
            }
        }
        let c = self.system.c;
        out.iter_mut().for_each(|o| *o *= c);
        out
    }

    fn resolvent(&self, b: &[f64]) -> Vec<f64> {
        let rhs: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let sol = self.system.solve(&rhs).expect("background system factorized");
        sol.iter().map(|v| v.re).collect()
    }
}

impl BornOperators for FemBornSystem {
    fn n_pairs(&self) -> usize {
        self.n_src * self.n_det
    }

    fn n_params(&self) -> usize {
        self.k1.ncols()
    }

    /// Detector-major: index = detector·n_sources + source.
    fn pair_index(&self, source: usize, detector: usize) -> usize {
        detector * self.n_src + source
    }

    fn k1_matrix(&self) -> DMatrix<f64> {
        self.k1.clone()
    }

    /// (-1)^{i+1} Z̄ᵀ(cM(v₁))K̄⁻¹(cM(v₂))⋯K̄⁻¹(cM(v_i))Ū per pair.
    fn forward_term(&self, args: &[DVector<f64>]) -> DVector<f64> {
        let i = args.len();
        assert!(i >= 1);
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        let mut out = DVector::zeros(self.n_pairs());
        for (s, u) in self.u_bar.iter().enumerate() {
            let mut w = self.weighted_mass_apply(&args[i - 1], u);
            for t in (0..i - 1).rev() {
                let solved = self.resolvent(&w);
                w = self.weighted_mass_apply(&args[t], &solved);
            }
            for (m, z) in self.z_bar.iter().enumerate() {
                let dot: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
                out[m * self.n_src + s] = sign * dot;
            }
        }
        out
    }
}

/// Per-order reconstruction state of the inverse series.
#[derive(Debug, Clone)]
pub struct SeriesState {
    pub order: usize,
    /// partial_sums[j] holds Σ_{i≤j+1} 𝒦_i Φ^{⊗i} on the parameter grid.
    pub partial_sums: Vec<Vec<f64>>,
    pub pinv: RegularizedPinv,
}

/// 𝒦_j evaluated at arbitrary data-space arguments, by the recursion. Every
/// composition of j into m ordered blocks re-expands the blocks through the
/// forward operators and feeds them back through lower-order 𝒦's.
fn kappa<S: BornOperators + ?Sized>(
    system: &S,
    pinv: &RegularizedPinv,
    args: &[DVector<f64>],
) -> DVector<f64> {
    let j = args.len();
    if j == 1 {
        return pinv.apply(&args[0]);
    }
    let back: Vec<DVector<f64>> = args.iter().map(|w| pinv.apply(w)).collect();
    let mut total = DVector::zeros(system.n_params());
    for m in 1..j {
        for parts in compositions(j, m) {
            let mut block_args = Vec::with_capacity(m);
            let mut at = 0;
            for &len in &parts {
                block_args.push(system.forward_term(&back[at..at + len]));
                at += len;
            }
            total += kappa(system, pinv, &block_args);
        }
    }
    -total
}

/// Ordered compositions of j into m positive parts.
fn compositions(j: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 1 {
        return vec![vec![j]];
    }
    let mut out = Vec::new();
    for first in 1..=(j - m + 1) {
        for mut rest in compositions(j - first, m - 1) {
            let mut c = vec![first];
            c.append(&mut rest);
            out.push(c);
        }
    }
    out
}

/// Runs the inverse series to the requested order. Orders above 3 are
/// rejected since the composition count (and the cost of the re-expansions)
/// explodes.
pub fn inverse_born_series<S: BornOperators + ?Sized>(
    data: &[f64],
    system: &S,
    pinv_truncation: f64,
    order: usize,
) -> Result<SeriesState> {
    if order == 0 {
        return Err(Error::InvalidArgument("series order must be ≥ 1".into()));
    }
    if order > MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            requested: order,
            max: MAX_ORDER,
        });
    }
    if data.len() != system.n_pairs() {
        return Err(Error::InvalidArgument(format!(
            "data has {} entries, expected {}",
            data.len(),
            system.n_pairs()
        )));
    }
    let a1 = system.k1_matrix();
    let pinv = RegularizedPinv::new(&a1, pinv_truncation)?;
    let phi = DVector::from_column_slice(data);
    let mut partial_sums = Vec::with_capacity(order);
    let mut acc = DVector::zeros(system.n_params());
    for j in 1..=order {
        let term = kappa(system, &pinv, &vec![phi.clone(); j]);
        acc += term;
        partial_sums.push(acc.as_slice().to_vec());
    }
    Ok(SeriesState {
        order,
        partial_sums,
        pinv,
    })
}

/// Convergence constants of the inverse series for a ball inclusion.
#[derive(Debug, Clone)]
pub struct ConvergenceConstants {
    pub mu: f64,
    pub nu: f64,
    /// 1/(μ+ν), the bound on ‖𝒦₁‖ and ‖𝒦₁Φ_s‖ for convergence.
    pub radius: f64,
    pub k: f64,
    pub a: f64,
    pub boundary_distance: f64,
    pub boundary_area: f64,
}

/// μ = k² e^{-ka/2} √(sinh(ka)/(4πk)) and the boundary-coupling bound
/// ν = k² |∂Ω| √(4πa³/3) e^{-2k·dist}/(4π·dist)².
pub fn convergence_radius(
    k: f64,
    a: f64,
    boundary_distance: f64,
    boundary_area: f64,
) -> Result<ConvergenceConstants> {
    if !(k > 0.0) || !(a > 0.0) {
        return Err(Error::InvalidArgument("k and a must be positive".into()));
    }
    if !(boundary_distance > 0.0) || boundary_area < 0.0 {
        return Err(Error::InvalidArgument(
            "boundary distance must be positive and area nonnegative".into(),
        ));
    }
    let ka = k * a;
    let mu = k * k * (-0.5 * ka).exp() * (ka.sinh() / (4.0 * std::f64::consts::PI * k)).sqrt();
    let ball_vol = 4.0 * std::f64::consts::PI * a.powi(3) / 3.0;
    let nu = k * k * boundary_area * ball_vol.sqrt() * (-2.0 * k * boundary_distance).exp()
        / (4.0 * std::f64::consts::PI * boundary_distance).powi(2);
    let radius = 1.0 / (mu + nu);
    Ok(ConvergenceConstants {
        mu,
        nu,
        radius,
        k,
        a,
        boundary_distance,
        boundary_area,
    })
}
