//! Sensitivity machinery: the FEM Jacobian built from forward and adjoint
//! fields, the analytic Born kernels of first and second order, and the
//! multispectral block system.

use crate::forward::{assemble_system, solve_adjoint, solve_forward, SourceDetectorLayout};
use crate::mesh::{Mesh, ParamField};
use crate::util::{bessel_k0, bessel_k1};
use crate::{Error, Result};
use num_complex::Complex64;

/// Dense sensitivity matrix of the forward map at a background parameter
/// field. Row (m, s) holds ∂y(m,s)/∂μ_k in `a_mu` and ∂y(m,s)/∂D_k in `a_d`,
/// computed as -Z_mᵀ (∂K/∂x_k) U_s with U the forward and Z the adjoint
/// fields. Rows are detector-major: row = m·n_sources + s.
pub struct Jacobian {
    pub a_mu: Vec<Complex64>,
    pub a_d: Vec<Complex64>,
    pub n_rows: usize,
    pub n_nodes: usize,
    pub n_detectors: usize,
    pub n_sources: usize,
    pub omega: f64,
}

impl Jacobian {
    #[inline]
    pub fn row_index(&self, detector: usize, source: usize) -> usize {
        detector * self.n_sources + source
    }

    pub fn mu_row(&self, row: usize) -> &[Complex64] {
        &self.a_mu[row * self.n_nodes..(row + 1) * self.n_nodes]
    }

    pub fn d_row(&self, row: usize) -> &[Complex64] {
        &self.a_d[row * self.n_nodes..(row + 1) * self.n_nodes]
    }

    /// Linearized data change for nodal perturbations (δμ_a, δD).
    pub fn apply(&self, dmu: &[f64], dd: &[f64]) -> Result<Vec<Complex64>> {
        if dmu.len() != self.n_nodes || dd.len() != self.n_nodes {
            return Err(Error::InvalidArgument(format!(
                "perturbation length {} / {} does not match {} nodes",
                dmu.len(),
                dd.len(),
                self.n_nodes
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_rows];
        for r in 0..self.n_rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, (&m, &d)) in dmu.iter().zip(dd).enumerate() {
                if m != 0.0 {
                    acc += self.a_mu[r * self.n_nodes + k] * m;
                }
                if d != 0.0 {
                    acc += self.a_d[r * self.n_nodes + k] * d;
                }
            }
            out[r] = acc;
        }
        Ok(out)
    }

    /// Adjoint action Aᴴ w, returned as (absorption part, diffusion part).
    pub fn apply_adjoint(&self, w: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        if w.len() != self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "weight length {} does not match {} rows",
                w.len(),
                self.n_rows
            )));
        }
        let mut gmu = vec![Complex64::new(0.0, 0.0); self.n_nodes];
        let mut gd = vec![Complex64::new(0.0, 0.0); self.n_nodes];
        for (r, &wr) in w.iter().enumerate() {
            if wr == Complex64::new(0.0, 0.0) {
                continue;
            }
            let base = r * self.n_nodes;
            for k in 0..self.n_nodes {
                gmu[k] += self.a_mu[base + k].conj() * wr;
                gd[k] += self.a_d[base + k].conj() * wr;
            }
        }
        Ok((gmu, gd))
    }
}

/// Production assembly: one forward batch, one adjoint batch, then an
/// element-block sweep accumulating every (row, node) entry at once.
pub fn assemble_jacobian(
    mesh: &Mesh,
    params0: &ParamField,
    layout: &SourceDetectorLayout,
    omega: f64,
    zeta: f64,
) -> Result<Jacobian> {
    let system = assemble_system(mesh, params0, omega, zeta)?;
    let fields = solve_forward(&system, layout)?;
    let adjoints = solve_adjoint(&system, layout)?;
    let n = mesh.n_nodes();
    let n_det = layout.n_detectors();
    let n_src = layout.n_sources();
    let n_rows = n_det * n_src;
    let mut a_mu = vec![Complex64::new(0.0, 0.0); n_rows * n];
    let mut a_d = vec![Complex64::new(0.0, 0.0); n_rows * n];
    let c = system.c;
    // column k at a time: every (i,j,w) in the node block contributes
    // -w·Z_m[i]·U_s[j] to each row
    let mut col = vec![Complex64::new(0.0, 0.0); n_rows];
    for k in 0..n {
        col.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for &(i, j, w) in &system.deriv_mu[k] {
            for (m, z) in adjoints.iter().enumerate() {
                let zi = z.values[i as usize] * w;
                for (s, u) in fields.iter().enumerate() {
                    col[m * n_src + s] += zi * u.values[j as usize];
                }
            }
        }
        for (r, &v) in col.iter().enumerate() {
            a_mu[r * n + k] = -c * v;
        }
        col.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for &(i, j, w) in &system.deriv_d[k] {
            for (m, z) in adjoints.iter().enumerate() {
                let zi = z.values[i as usize] * w;
                for (s, u) in fields.iter().enumerate() {
                    col[m * n_src + s] += zi * u.values[j as usize];
                }
            }
        }
        for (r, &v) in col.iter().enumerate() {
            a_d[r * n + k] = -v;
        }
    }
    Ok(Jacobian { a_mu, a_d, n_rows, n_nodes: n, n_detectors: n_det, n_sources: n_src, omega })
}

/// Reference assembly, one (detector, source) row at a time. Kept as the
/// independent code path that the batched assembly is tested against.
pub fn assemble_jacobian_rowwise(
    mesh: &Mesh,
    params0: &ParamField,
    layout: &SourceDetectorLayout,
    omega: f64,
    zeta: f64,
) -> Result<Jacobian> {
    let system = assemble_system(mesh, params0, omega, zeta)?;
    let fields = solve_forward(&system, layout)?;
    let adjoints = solve_adjoint(&system, layout)?;
    let n = mesh.n_nodes();
    let n_det = layout.n_detectors();
    let n_src = layout.n_sources();
    let n_rows = n_det * n_src;
    let mut a_mu = vec![Complex64::new(0.0, 0.0); n_rows * n];
    let mut a_d = vec![Complex64::new(0.0, 0.0); n_rows * n];
    let c = system.c;
    for m in 0..n_det {
        for s in 0..n_src {
            let row = m * n_src + s;
            let z = &adjoints[m].values;
            let u = &fields[s].values;
            for k in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(i, j, w) in &system.deriv_mu[k] {
                    acc += z[i as usize] * u[j as usize] * w;
                }
                a_mu[row * n + k] = -c * acc;
                let mut acc = Complex64::new(0.0, 0.0);
                for &(i, j, w) in &system.deriv_d[k] {
                    acc += z[i as usize] * u[j as usize] * w;
                }
                a_d[row * n + k] = -acc;
            }
        }
    }
    Ok(Jacobian { a_mu, a_d, n_rows, n_nodes: n, n_detectors: n_det, n_sources: n_src, omega })
}

/// Homogeneous background for the analytic Born kernels.
#[derive(Clone, Copy, Debug)]
pub struct DiffuseWavenumber {
    pub k: Complex64,
    pub d0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BornGeometry {
    Infinite3d,
    Infinite2d,
}

/// First- and second-order scattering kernels over interior points, built on
/// the homogeneous-background Green's function. Superscript 1 couples to
/// cδμ_a, superscript 2 to δD.
pub struct BornKernels {
    pub background: DiffuseWavenumber,
    pub geometry: BornGeometry,
}

pub fn born_kernels(background: DiffuseWavenumber, geometry: BornGeometry) -> Result<BornKernels> {
    if !(background.d0 > 0.0) {
        return Err(Error::InvalidArgument("diffusion constant must be positive".into()));
    }
    if !(background.k.re > 0.0) && background.k.norm() == 0.0 {
        return Err(Error::InvalidArgument("wavenumber must be nonzero".into()));
    }
    if geometry == BornGeometry::Infinite2d && (background.k.im != 0.0 || !(background.k.re > 0.0)) {
        return Err(Error::InvalidArgument(
            "planar kernels need a real positive wavenumber".into(),
        ));
    }
    Ok(BornKernels { background, geometry })
}

/// Green's value plus first and second radial derivatives at separation s.
struct Radial {
    g: Complex64,
    gp: Complex64,
    gpp: Complex64,
    s: f64,
    shat: [f64; 3],
}

impl BornKernels {
    fn radial(&self, a: [f64; 3], b: [f64; 3]) -> Result<Radial> {
        if self.geometry == BornGeometry::Infinite2d && (a[2] != 0.0 || b[2] != 0.0) {
            return Err(Error::DomainViolation("planar kernels need z = 0".into()));
        }
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let s = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if s == 0.0 {
            return Err(Error::SingularEvaluation("coincident kernel points".into()));
        }
        let shat = [d[0] / s, d[1] / s, d[2] / s];
        let d0 = self.background.d0;
        match self.geometry {
            BornGeometry::Infinite3d => {
                let k = self.background.k;
                let g = (-k * s).exp() / (4.0 * std::f64::consts::PI * d0 * s);
                let gp = -(k + 1.0 / s) * g;
                let gpp = (k * k + 2.0 * k / s + 2.0 / (s * s)) * g;
                Ok(Radial { g, gp, gpp, s, shat })
            }
            BornGeometry::Infinite2d => {
                let k = self.background.k.re;
                let norm = 2.0 * std::f64::consts::PI * d0;
                let g = Complex64::new(bessel_k0(k * s) / norm, 0.0);
                let gp = Complex64::new(-k * bessel_k1(k * s) / norm, 0.0);
                let gpp =
                    Complex64::new(k * k * (bessel_k0(k * s) + bessel_k1(k * s) / (k * s)) / norm, 0.0);
                Ok(Radial { g, gp, gpp, s, shat })
            }
        }
    }

    pub fn greens(&self, a: [f64; 3], b: [f64; 3]) -> Result<Complex64> {
        Ok(self.radial(a, b)?.g)
    }

    /// ∇_b G(a, b): gradient with respect to the second point.
    fn grad(&self, a: [f64; 3], b: [f64; 3]) -> Result<[Complex64; 3]> {
        let r = self.radial(a, b)?;
        // ∂_b s = (b - a)/s = -ŝ with ŝ = (a - b)/s
        Ok([-r.gp * r.shat[0], -r.gp * r.shat[1], -r.gp * r.shat[2]])
    }

    pub fn k1_1(&self, r1: [f64; 3], r2: [f64; 3], r: [f64; 3]) -> Result<Complex64> {
        Ok(self.greens(r1, r)? * self.greens(r, r2)?)
    }

    pub fn k1_2(&self, r1: [f64; 3], r2: [f64; 3], r: [f64; 3]) -> Result<Complex64> {
        let a = self.grad(r1, r)?;
        let b = self.grad(r2, r)?;
        Ok(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
    }

    pub fn k2_11(&self, r1: [f64; 3], r2: [f64; 3], r: [f64; 3], rp: [f64; 3]) -> Result<Complex64> {
        Ok(-(self.greens(r1, r)? * self.greens(r, rp)? * self.greens(rp, r2)?))
    }

    pub fn k2_12(&self, r1: [f64; 3], r2: [f64; 3], r: [f64; 3], rp: [f64; 3]) -> Result<Complex64> {
        let a = self.grad(r, rp)?;
        let b = self.grad(r2, rp)?;
        Ok(-(self.greens(r1, r)? * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2])))
    }

    pub fn k2_21(&self, r1: [f64; 3], r2: [f64; 3], r: [f64; 3], rp: [f64; 3]) -> Result<Complex64> {
        let a = self.grad(r1, r)?;
        let b = self.grad(rp, r)?;
        Ok(-((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) * self.greens(rp, r2)?))
    }

    pub fn k2_22(&self, r1: [f64; 3], r2: [f64; 3], r: [f64; 3], rp: [f64; 3]) -> Result<Complex64> {
        // -∇_r G(r1,r) · H(r,r') · ∇_{r'} G(r',r2) with
        // H_ab = ∂_{r_a}∂_{r'_b} G(r,r') = -[g'' ŝ_a ŝ_b + (g'/s)(δ_ab - ŝ_a ŝ_b)]
        let u = self.grad(r1, r)?;
        let mid = self.radial(r, rp)?;
        let v = self.grad(r2, rp)?;
        let mut acc = Complex64::new(0.0, 0.0);
        let udots = u[0] * mid.shat[0] + u[1] * mid.shat[1] + u[2] * mid.shat[2];
        let vdots = v[0] * mid.shat[0] + v[1] * mid.shat[1] + v[2] * mid.shat[2];
        let udotv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        // uᵀHv accumulates with H's inner minus; the kernel is -uᵀHv
        acc -= mid.gpp * udots * vdots;
        acc -= mid.gp / mid.s * (udotv - udots * vdots);
        Ok(-acc)
    }
}

/// Stacked multi-wavelength system mapping (c₁..c_K, a, b) perturbations to
/// data at every wavelength. Per wavelength j the row block is
/// [ε₁(λ_j)A_μ … ε_K(λ_j)A_μ | λ_j^{-b}A_D | a λ_j^{-b} ln λ_j · A_D],
/// reusing each wavelength's diffusion sensitivities as the scattering
/// parameter block.
pub struct MultispectralJacobian {
    pub entries: Vec<Complex64>,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_chromophores: usize,
    pub n_nodes: usize,
}

pub fn assemble_multispectral(
    jacobians: &[Jacobian],
    extinction: &[Vec<f64>],
    a: f64,
    b: f64,
    wavelengths: &[f64],
) -> Result<MultispectralJacobian> {
    if jacobians.is_empty() || jacobians.len() != wavelengths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} jacobians for {} wavelengths",
            jacobians.len(),
            wavelengths.len()
        )));
    }
    let n_chrom = extinction.len();
    if n_chrom == 0 {
        return Err(Error::InvalidArgument("need at least one chromophore".into()));
    }
    for row in extinction {
        if row.len() != wavelengths.len() {
            return Err(Error::InvalidArgument(format!(
                "extinction row length {} does not match {} wavelengths",
                row.len(),
                wavelengths.len()
            )));
        }
    }
    let n = jacobians[0].n_nodes;
    let rows_per = jacobians[0].n_rows;
    if jacobians.iter().any(|j| j.n_nodes != n || j.n_rows != rows_per) {
        return Err(Error::InvalidArgument("jacobians must share shape".into()));
    }
    if wavelengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("wavelengths must be positive".into()));
    }
    let n_rows = rows_per * wavelengths.len();
    let n_cols = (n_chrom + 2) * n;
    let mut entries = vec![Complex64::new(0.0, 0.0); n_rows * n_cols];
    for (j, (&lambda, jac)) in wavelengths.iter().zip(jacobians).enumerate() {
        let scatter = lambda.powf(-b);
        let scatter_b = a * lambda.powf(-b) * lambda.ln();
        for r in 0..rows_per {
            let out_row = j * rows_per + r;
            let base = out_row * n_cols;
            for k in 0..n {
                let amu = jac.a_mu[r * n + k];
                for (c, eps) in extinction.iter().enumerate() {
                    entries[base + c * n + k] = amu * eps[j];
                }
                let ad = jac.a_d[r * n + k];
                entries[base + n_chrom * n + k] = ad * scatter;
                entries[base + (n_chrom + 1) * n + k] = ad * scatter_b;
            }
        }
    }
    Ok(MultispectralJacobian { entries, n_rows, n_cols, n_chromophores: n_chrom, n_nodes: n })
}
