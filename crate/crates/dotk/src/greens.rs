//! Analytic Green's functions for the frequency-domain diffusion operator
//! (-D₀∇² + cμ̄_a + iω) on simple geometries. These are the kernels behind
//! the direct inversion formulas and the oracles for their tests.

use crate::util::{bessel_k0, simpson};
use crate::{Error, Result};
use num_complex::Complex64;

/// k = sqrt((c μ̄_a + iω)/D₀), principal branch so Re k ≥ 0.
pub fn diffuse_wavenumber(mu_a: f64, d0: f64, omega: f64, c: f64) -> Result<Complex64> {
    if !(d0 > 0.0) {
        return Err(Error::InvalidArgument(format!("diffusion constant must be positive, got {d0}")));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("light speed must be positive, got {c}")));
    }
    if !(mu_a >= 0.0) || !omega.is_finite() || omega < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need mu_a ≥ 0 and omega ≥ 0, got {mu_a}, {omega}"
        )));
    }
    Ok((Complex64::new(c * mu_a, omega) / d0).sqrt())
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Infinite-medium Green's function in 3D: e^{-k s}/(4π D₀ s).
pub fn greens_infinite(r: [f64; 3], r_prime: [f64; 3], k: Complex64, d0: f64) -> Result<Complex64> {
    if !(d0 > 0.0) {
        return Err(Error::InvalidArgument("diffusion constant must be positive".into()));
    }
    let s = dist3(r, r_prime);
    if s == 0.0 {
        return Err(Error::SingularEvaluation("coincident source and field points".into()));
    }
    Ok((-k * s).exp() / (4.0 * std::f64::consts::PI * d0 * s))
}

/// Infinite-medium Green's function in 2D: K₀(k s)/(2π D₀), real k only.
pub fn greens_infinite_2d(r: [f64; 2], r_prime: [f64; 2], k: f64, d0: f64) -> Result<f64> {
    if !(d0 > 0.0) || !(k > 0.0) {
        return Err(Error::InvalidArgument("need d0 > 0 and real k > 0".into()));
    }
    let s = ((r[0] - r_prime[0]).powi(2) + (r[1] - r_prime[1]).powi(2)).sqrt();
    if s == 0.0 {
        return Err(Error::SingularEvaluation("coincident source and field points".into()));
    }
    Ok(bessel_k0(k * s) / (2.0 * std::f64::consts::PI * d0))
}

/// Transverse-Fourier half-space Green's function with one point on the
/// plane z = 0: g(q; z, z') = (ℓ/D₀) e^{-Q|z-z'|} / (Qℓ + 1) with
/// Q = sqrt(q² + k²). Off-plane pairs need the full mode sum and are refused.
pub fn halfspace_mode(q: f64, z: f64, z_prime: f64, k: Complex64, d0: f64, ell: f64) -> Result<Complex64> {
    if !(d0 > 0.0) || !(ell > 0.0) {
        return Err(Error::InvalidArgument("need d0 > 0 and extrapolation length > 0".into()));
    }
    if z < 0.0 || z_prime < 0.0 {
        return Err(Error::DomainViolation("half-space points need z ≥ 0".into()));
    }
    if z != 0.0 && z_prime != 0.0 {
        return Err(Error::DomainViolation(
            "one of z, z' must lie on the measurement plane z = 0".into(),
        ));
    }
    let q2k2 = Complex64::new(q * q, 0.0) + k * k;
    let qq = if q2k2.norm() < 1e-30 { k } else { q2k2.sqrt() };
    Ok((ell / d0) * (-qq * (z - z_prime).abs()).exp() / (qq * ell + 1.0))
}

/// Half-space Green's function in real space by the image representation:
///
///   G(r,r') = G∞(r-r') + G∞(r-r̄') - (2/ℓ)∫₀^∞ e^{-s/ℓ} G∞(r-(ρ', -z'-s)) ds
///
/// with r̄' the mirror of r' through z = 0. Its transverse Fourier transform
/// reproduces the reflection coefficient (Qℓ-1)/(Qℓ+1), hence the Robin
/// condition Φ - ℓ∂_zΦ = 0 on the plane.
pub fn halfspace_greens(r: [f64; 3], r_prime: [f64; 3], k: Complex64, d0: f64, ell: f64) -> Result<Complex64> {
    if r[2] < 0.0 || r_prime[2] < 0.0 {
        return Err(Error::DomainViolation("half-space points need z ≥ 0".into()));
    }
    if !(ell > 0.0) {
        return Err(Error::InvalidArgument("extrapolation length must be positive".into()));
    }
    let direct = greens_infinite(r, r_prime, k, d0)?;
    let mirror = [r_prime[0], r_prime[1], -r_prime[2]];
    let image = greens_infinite(r, mirror, k, d0)?;
    // substitute s = -ℓ ln(1-u): (2/ℓ)∫₀^∞ e^{-s/ℓ} G ds = 2∫₀^1 G(s(u)) du
    let tail = simpson(
        |u| {
            if u >= 1.0 - 1e-14 {
                return Complex64::new(0.0, 0.0);
            }
            let s = -ell * (1.0 - u).ln();
            let p = [r_prime[0], r_prime[1], -r_prime[2] - s];
            greens_infinite(r, p, k, d0).unwrap()
        },
        0.0,
        1.0,
        256,
    );
    Ok(direct + image - 2.0 * tail)
}

/// Half-line Green's function on x ≥ 0 with extrapolation length ℓ:
/// (1/(2 D₀ k)) (e^{-k|x-y|} + (1-kℓ)/(1+kℓ) e^{-k(x+y)}).
pub fn greens_1d(x: f64, y: f64, k: f64, d0: f64, ell: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("wavenumber must be positive, got {k}")));
    }
    if !(d0 > 0.0) || !(ell >= 0.0) {
        return Err(Error::InvalidArgument("need d0 > 0 and ℓ ≥ 0".into()));
    }
    if x < 0.0 || y < 0.0 {
        return Err(Error::DomainViolation("half-line points need x ≥ 0".into()));
    }
    let reflect = (1.0 - k * ell) / (1.0 + k * ell);
    Ok(((-k * (x - y).abs()).exp() + reflect * (-k * (x + y)).exp()) / (2.0 * d0 * k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumber_dc_value() {
        let k = diffuse_wavenumber(0.01, 1.0 / 3.0, 0.0, 1.0).unwrap();
        assert!((k.re - 0.17320508075688773).abs() < 1e-12);
        assert!(k.im.abs() < 1e-15);
    }

    #[test]
    fn wavenumber_pure_frequency_has_45_degree_phase() {
        let k = diffuse_wavenumber(0.0, 0.5, 2.0, 1.0).unwrap();
        assert!((k.arg() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((k.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wavenumber_rejects_nonpositive_diffusion() {
        assert!(matches!(
            diffuse_wavenumber(0.01, 0.0, 0.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            diffuse_wavenumber(0.01, -1.0, 0.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn infinite_unit_distance_value() {
        let d0 = 1.0 / (4.0 * std::f64::consts::PI);
        let g = greens_infinite([1.0, 0.0, 0.0], [0.0; 3], Complex64::new(0.0, 0.0), d0).unwrap();
        assert!((g - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn infinite_coincident_points_refused() {
        let r = [0.3, -0.2, 1.0];
        assert!(matches!(
            greens_infinite(r, r, Complex64::new(1.0, 0.0), 1.0),
            Err(Error::SingularEvaluation(_))
        ));
    }

    #[test]
    fn infinite_3d_satisfies_modified_helmholtz() {
        // 7-point Laplacian: (∇² - k²)G = 0 away from the source
        let k = Complex64::new(0.8, 0.35);
        let d0 = 0.4;
        let src = [0.0; 3];
        let p = [0.9, 0.4, -0.3];
        let delta = 1e-3;
        let g = |r: [f64; 3]| greens_infinite(r, src, k, d0).unwrap();
        let center = g(p);
        let mut lap = -6.0 * center;
        for axis in 0..3 {
            for sgn in [-1.0, 1.0] {
                let mut q = p;
                q[axis] += sgn * delta;
                lap += g(q);
            }
        }
        lap /= delta * delta;
        let resid = (lap - k * k * center).norm() / center.norm();
        assert!(resid < 1e-4, "pde residual {resid}");
    }

    #[test]
    fn infinite_2d_satisfies_modified_helmholtz() {
        let k = 0.7;
        let d0 = 0.4;
        let src = [0.0, 0.0];
        let p = [1.1, 0.2];
        let delta = 1e-3;
        let g = |r: [f64; 2]| greens_infinite_2d(r, src, k, d0).unwrap();
        let center = g(p);
        let mut lap = -4.0 * center;
        for (dx, dy) in [(delta, 0.0), (-delta, 0.0), (0.0, delta), (0.0, -delta)] {
            lap += g([p[0] + dx, p[1] + dy]);
        }
        lap /= delta * delta;
        let resid = (lap - k * k * center).abs() / center.abs();
        assert!(resid < 1e-4, "pde residual {resid}");
    }

    #[test]
    fn mode_surface_value() {
        let k = Complex64::new(0.5, 0.0);
        let g = halfspace_mode(0.0, 0.0, 0.0, k, 1.0 / 3.0, 2.0).unwrap();
        let expect = (2.0 / (1.0 / 3.0)) / (0.5 * 2.0 + 1.0);
        assert!((g - Complex64::new(expect, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn mode_refuses_two_interior_points() {
        let k = Complex64::new(0.5, 0.0);
        assert!(matches!(
            halfspace_mode(1.0, 0.5, 1.0, k, 1.0 / 3.0, 1.0),
            Err(Error::DomainViolation(_))
        ));
        assert!(matches!(
            halfspace_mode(1.0, -0.5, 0.0, k, 1.0 / 3.0, 1.0),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn image_representation_obeys_robin_condition() {
        // Φ - ℓ∂_zΦ = 0 at z = 0 for the field point, one-sided difference
        let k = Complex64::new(0.6, 0.2);
        let d0 = 1.0 / 3.0;
        let ell = 0.9;
        let src = [0.4, -0.3, 1.7];
        let (x, y) = (1.2, 0.5);
        let delta = 1e-3;
        let g = |z: f64| halfspace_greens([x, y, z], src, k, d0, ell).unwrap();
        let g0 = g(0.0);
        let dz = (-3.0 * g0 + 4.0 * g(delta) - g(2.0 * delta)) / (2.0 * delta);
        let resid = (g0 - ell * dz).norm() / g0.norm();
        assert!(resid < 1e-4, "robin residual {resid}");
    }

    #[test]
    fn image_representation_approaches_free_space_deep_inside() {
        let k = Complex64::new(1.0, 0.0);
        let d0 = 1.0 / 3.0;
        let r = [0.3, 0.0, 8.0];
        let rp = [-0.4, 0.2, 8.5];
        let hs = halfspace_greens(r, rp, k, d0, 1.0).unwrap();
        let free = greens_infinite(r, rp, k, d0).unwrap();
        assert!((hs - free).norm() / free.norm() < 1e-6);
    }

    #[test]
    fn mode_matches_lattice_transform_of_image_representation() {
        // a² Σ_ρ G((ρ,0),(0,0,h)) e^{iq·ρ} over a wide window reproduces the
        // closed-form transverse mode within quadrature/truncation error
        let k = Complex64::new(0.6, 0.0);
        let d0 = 1.0 / 3.0;
        let ell = 1.0;
        let h = 1.5;
        let a = 0.5;
        let n = 64usize;
        let half = (n / 2) as i64;
        let mut samples = vec![Complex64::new(0.0, 0.0); n * n];
        for ix in 0..n {
            for iy in 0..n {
                let x = (ix as i64 - half) as f64 * a;
                let y = (iy as i64 - half) as f64 * a;
                samples[ix * n + iy] =
                    halfspace_greens([x, y, 0.0], [0.0, 0.0, h], k, d0, ell).unwrap();
            }
        }
        for (mx, my) in [(0i64, 0i64), (2, 0), (3, 5)] {
            let qx = 2.0 * std::f64::consts::PI * mx as f64 / (n as f64 * a);
            let qy = 2.0 * std::f64::consts::PI * my as f64 / (n as f64 * a);
            let mut acc = Complex64::new(0.0, 0.0);
            for ix in 0..n {
                for iy in 0..n {
                    let x = (ix as i64 - half) as f64 * a;
                    let y = (iy as i64 - half) as f64 * a;
                    acc += samples[ix * n + iy]
                        * Complex64::new(0.0, qx * x + qy * y).exp();
                }
            }
            acc *= a * a;
            let q = (qx * qx + qy * qy).sqrt();
            let expect = halfspace_mode(q, 0.0, h, k, d0, ell).unwrap();
            let rel = (acc - expect).norm() / expect.norm();
            assert!(rel < 0.01, "mode ({mx},{my}) mismatch {rel}");
        }
    }

    #[test]
    fn greens_1d_surface_value() {
        let (k, d0, ell) = (0.8, 0.5, 1.3);
        let g = greens_1d(0.0, 0.0, k, d0, ell).unwrap();
        assert!((g - 1.0 / (d0 * k * (1.0 + k * ell))).abs() < 1e-14);
    }

    #[test]
    fn greens_1d_matched_ell_has_no_image() {
        let k = 0.7;
        let ell = 1.0 / k;
        for (x, y) in [(0.3, 1.2), (2.0, 0.1), (1.0, 1.0 + 1e-9)] {
            let g = greens_1d(x, y, k, 0.5, ell).unwrap();
            let free = (-k * (x - y).abs()).exp() / (2.0 * 0.5 * k);
            assert!((g - free).abs() < 1e-14);
        }
    }

    #[test]
    fn greens_1d_rejects_nonpositive_wavenumber() {
        assert!(matches!(greens_1d(0.1, 0.2, 0.0, 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(greens_1d(0.1, 0.2, -1.0, 1.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn greens_1d_solves_ode_away_from_source() {
        // G'' = k² G for x ≠ y
        let (k, d0, ell) = (1.1, 0.4, 0.6);
        let y = 0.8;
        let delta = 1e-3;
        for x in [0.2, 1.5, 3.0] {
            let g = |x: f64| greens_1d(x, y, k, d0, ell).unwrap();
            let second = (g(x + delta) - 2.0 * g(x) + g(x - delta)) / (delta * delta);
            let resid = (second - k * k * g(x)).abs() / g(x).abs();
            assert!(resid < 1e-4, "ode residual {resid} at x={x}");
        }
    }
}
