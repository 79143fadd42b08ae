//! Linear reconstruction algorithms for y = A x with covariance weighting.
//!
//! Everything here minimizes the weighted Tikhonov functional
//!
//!   E_a(x) = 1/2 ||y - A x||^2_{Ge^-1} + a/2 ||x||^2_{Gx^-1}
//!
//! or a multiplicative analogue of it. The covariances enter through the
//! canonical change of variables yt = Le y, At = Le A Lx^-1, xt = Lx x with
//! Le'Le = Ge^-1 and Lx'Lx = Gx^-1, which turns the functional into plain
//! Tikhonov; Le and Lx^-1 act as left and right preconditioners. Direct
//! Newton forms, gradient iterations, conjugate gradients and Krylov bases
//! all work on the transformed system and map back. Row-action and
//! multiplicative schemes work on the original entries instead, since their
//! conditioning is built from row and column norms of A itself.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::{Error, Result};

/// Symmetric positive-definite covariance together with the factor L of its
/// inverse, L'L = Gamma^-1. The factor is what every solver actually uses;
/// keeping it next to Gamma avoids refactoring the same matrix in every call.
#[derive(Debug, Clone)]
pub struct Covariance {
    pub gamma: DMatrix<f64>,
    /// Lower-triangular L with L'L = gamma^-1.
    pub factor: DMatrix<f64>,
}

impl Covariance {
    /// Builds the covariance from Gamma, factoring its inverse.
    pub fn from_gamma(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() != gamma.ncols() {
            return Err(Error::InvalidCovariance(format!(
                "covariance must be square, got {}x{}",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        let n = gamma.nrows();
        let sym_err = (&gamma - gamma.transpose()).norm();
        if sym_err > 1e-10 * gamma.norm().max(1.0) {
            return Err(Error::InvalidCovariance(format!(
                "covariance asymmetric by {sym_err:.2e}"
            )));
        }
        let chol = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidCovariance("covariance is not positive definite".into()))?;
        // Gamma = C C' gives Gamma^-1 = C^-T C^-1, so L = C^-1 is lower
        // triangular and L'L = Gamma^-1.
        let factor = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::InvalidCovariance("singular covariance factor".into()))?;
        let check = (factor.transpose() * &factor * &gamma - DMatrix::identity(n, n)).norm();
        if check > 1e-8 {
            return Err(Error::InvalidCovariance(format!(
                "factorization residual {check:.2e}"
            )));
        }
        Ok(Covariance { gamma, factor })
    }

    pub fn identity(n: usize) -> Self {
        Covariance {
            gamma: DMatrix::identity(n, n),
            factor: DMatrix::identity(n, n),
        }
    }

    /// Diagonal covariance from per-component variances.
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidCovariance(
                "variances must be positive and finite".into(),
            ));
        }
        let n = variances.len();
        let gamma = DMatrix::from_diagonal(&DVector::from_iterator(n, variances.iter().copied()));
        let factor = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            variances.iter().map(|v| 1.0 / v.sqrt()),
        ));
        Ok(Covariance { gamma, factor })
    }

    /// Sphering preconditioner: Gamma_x^-1 = diag[A' Ge^-1 A], which
    /// equalizes the objective curvature along coordinate axes.
    pub fn sphering(a: &DMatrix<f64>, gamma_e: &Covariance) -> Result<Self> {
        let at_w = gamma_e.factor_apply_matrix(a);
        let variances: Vec<f64> = (0..a.ncols())
            .map(|j| {
                let col = at_w.column(j);
                1.0 / col.dot(&col)
            })
            .collect();
        if variances.iter().any(|v| !v.is_finite() || !(*v > 0.0)) {
            return Err(Error::InvalidCovariance(
                "sphering needs every column of A nonzero".into(),
            ));
        }
        Covariance::diagonal(&variances)
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// L v.
    pub fn factor_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.factor * v
    }

    /// L M for a matrix M.
    pub fn factor_apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.factor * m
    }

    /// L^-1 v (triangular solve).
    pub fn factor_solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor
            .solve_lower_triangular(v)
            .ok_or_else(|| Error::Internal("covariance factor lost rank".into()))
    }

    /// Gamma^-1 v = L'L v.
    pub fn precision_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.factor.transpose() * (&self.factor * v)
    }

    /// Gamma v.
    pub fn gamma_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.gamma * v
    }
}

/// Why an iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Used the whole iteration budget.
    Budget,
    /// Relative objective change fell below 1e-10.
    Stalled,
    /// Gradient or residual became negligible.
    Converged,
}

/// Estimate plus the objective trace of the iteration that produced it.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Objective value before the first step and after every accepted step;
    /// always iterations + 1 entries.
    pub objective: Vec<f64>,
    pub termination: Termination,
}

const STALL_TOL: f64 = 1e-10;

/// True when an iteration has genuinely stagnated: the objective moved by
/// less than 1e-10 of itself AND the iterate itself stopped moving. The
/// second clause matters: methods with a nonzero residual at the optimum see
/// tiny objective changes long before the estimate has settled to full
/// accuracy, and cutting them off there would cap the attainable agreement
/// with the direct solution near 1e-4.
fn stalled(prev: f64, next: f64, step_norm: f64, x_norm: f64) -> bool {
    (prev - next).abs() <= STALL_TOL * prev.abs() && step_norm <= 1e-12 * x_norm.max(1e-300)
}

/// Canonical (dimensionless) form of a weighted least-squares problem:
/// the transformed matrix plus the maps between original and transformed
/// variables.
pub struct CanonicalTransform {
    pub a_tilde: DMatrix<f64>,
    le: DMatrix<f64>,
    lx: DMatrix<f64>,
}

impl CanonicalTransform {
    /// yt = Le y.
    pub fn map_y(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.le * y
    }

    /// xt = Lx x.
    pub fn map_x(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.lx * x
    }

    /// x = Lx^-1 xt.
    pub fn unmap_x(&self, xt: &DVector<f64>) -> Result<DVector<f64>> {
        self.lx
            .solve_lower_triangular(xt)
            .ok_or_else(|| Error::Internal("parameter factor lost rank".into()))
    }
}

/// Builds At = Le A Lx^-1 and the associated variable maps.
pub fn canonical_transform(
    a: &DMatrix<f64>,
    gamma_e: &Covariance,
    gamma_x: &Covariance,
) -> Result<CanonicalTransform> {
    if gamma_e.dim() != a.nrows() || gamma_x.dim() != a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "A is {}x{} but covariances are {} (data) and {} (parameters)",
            a.nrows(),
            a.ncols(),
            gamma_e.dim(),
            gamma_x.dim()
        )));
    }
    // A Lx^-1 column-wise: solve Lx' X' = A' since Lx is lower triangular.
    let xt = gamma_x
        .factor
        .transpose()
        .solve_upper_triangular(&a.transpose())
        .ok_or_else(|| Error::Internal("parameter factor lost rank".into()))?;
    let a_tilde = gamma_e.factor_apply_matrix(&xt.transpose());
    Ok(CanonicalTransform {
        a_tilde,
        le: gamma_e.factor.clone(),
        lx: gamma_x.factor.clone(),
    })
}

/// Which normal-equation form a direct Tikhonov solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonMode {
    /// (A' Ge^-1 A + a Gx^-1) x = A' Ge^-1 y; an N x N solve.
    Overdetermined,
    /// x = Gx A' (A Gx A' + a Ge)^-1 y; an M x M solve.
    Underdetermined,
}

/// Direct regularized solution of the weighted problem in either normal form.
/// Both give the same estimate; pick the smaller system.
pub fn tikhonov_newton(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    gamma_e: &Covariance,
    gamma_x: &Covariance,
    mode: NewtonMode,
) -> Result<SolveReport> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tikhonov_newton needs alpha > 0, got {alpha}"
        )));
    }
    check_system(a, y, gamma_e, gamma_x)?;
    let x = match mode {
        NewtonMode::Overdetermined => {
            let wa = gamma_e.factor_apply_matrix(a);
            let gx_inv = gamma_x.factor.transpose() * &gamma_x.factor;
            let normal = wa.transpose() * &wa + alpha * gx_inv;
            let rhs = wa.transpose() * gamma_e.factor_apply(y);
            normal
                .cholesky()
                .ok_or_else(|| Error::Internal("normal matrix not positive definite".into()))?
                .solve(&rhs)
        }
        NewtonMode::Underdetermined => {
            let agx = &gamma_x.gamma * a.transpose();
            let normal = a * &agx + alpha * &gamma_e.gamma;
            let z = normal
                .cholesky()
                .ok_or_else(|| Error::Internal("normal matrix not positive definite".into()))?
                .solve(y);
            agx * z
        }
    };
    let obj = weighted_objective(a, y, alpha, gamma_e, gamma_x, &x);
    Ok(SolveReport {
        x,
        iterations: 0,
        objective: vec![obj],
        termination: Termination::Converged,
    })
}

fn check_system(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma_e: &Covariance,
    gamma_x: &Covariance,
) -> Result<()> {
    if y.len() != a.nrows() {
        return Err(Error::InvalidArgument(format!(
            "A has {} rows but y has {} entries",
            a.nrows(),
            y.len()
        )));
    }
    if gamma_e.dim() != a.nrows() || gamma_x.dim() != a.ncols() {
        return Err(Error::InvalidArgument(
            "covariance dimensions do not match the system".into(),
        ));
    }
    Ok(())
}

fn weighted_objective(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    gamma_e: &Covariance,
    gamma_x: &Covariance,
    x: &DVector<f64>,
) -> f64 {
    let r = gamma_e.factor_apply(&(y - a * x));
    let p = gamma_x.factor_apply(x);
    0.5 * r.dot(&r) + 0.5 * alpha * p.dot(&p)
}

/// First-order iteration flavor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientVariant {
    /// Exact line-search step along the negative gradient.
    Steepest,
    /// Fixed step tau; requires 0 < tau < 2 / lambda_max(At'At + a I).
    Landweber { tau: f64 },
}

/// Steepest descent or Landweber on the canonical system, mapped back.
pub fn gradient_iterate(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    gamma_e: &Covariance,
    gamma_x: &Covariance,
    variant: GradientVariant,
    iters: usize,
) -> Result<SolveReport> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    check_system(a, y, gamma_e, gamma_x)?;
    let transform = canonical_transform(a, gamma_e, gamma_x)?;
    let at = &transform.a_tilde;
    let yt = transform.map_y(y);
    if let GradientVariant::Landweber { tau } = variant {
        let bound = 2.0 / (power_iteration_bound(at, alpha) / 0.9);
        if !(tau > 0.0) || tau >= bound {
            return Err(Error::InvalidArgument(format!(
                "landweber step {tau} outside (0, {bound:.4e})"
            )));
        }
    }
    let n = at.ncols();
    let mut x = DVector::zeros(n);
    let mut objective = Vec::with_capacity(iters + 1);
    objective.push(plain_objective(at, &yt, alpha, &x));
    let mut termination = Termination::Budget;
    let mut steps = 0;
    for _ in 0..iters {
        let s = at.transpose() * (&yt - at * &x) - alpha * &x;
        let s_norm2 = s.dot(&s);
        if s_norm2 < 1e-28 {
            termination = Termination::Converged;
            break;
        }
        let tau = match variant {
            GradientVariant::Steepest => {
                let as_ = at * &s;
                s_norm2 / (as_.dot(&as_) + alpha * s_norm2)
            }
            GradientVariant::Landweber { tau } => tau,
        };
        x += tau * &s;
        steps += 1;
        let obj = plain_objective(at, &yt, alpha, &x);
        let prev = *objective.last().unwrap();
        objective.push(obj);
        if stalled(prev, obj, tau.abs() * s_norm2.sqrt(), x.norm()) {
            termination = Termination::Stalled;
            break;
        }
    }
    Ok(SolveReport {
        x: transform.unmap_x(&x)?,
        iterations: steps,
        objective,
        termination,
    })
}

fn plain_objective(at: &DMatrix<f64>, yt: &DVector<f64>, alpha: f64, x: &DVector<f64>) -> f64 {
    let r = yt - at * x;
    0.5 * r.dot(&r) + 0.5 * alpha * x.dot(&x)
}

/// Largest eigenvalue of At'At + a I by power iteration (50 rounds, started
/// from a fixed ramp so runs are reproducible).
fn power_iteration_bound(at: &DMatrix<f64>, alpha: f64) -> f64 {
    let n = at.ncols();
    let mut v = DVector::from_iterator(n, (0..n).map(|i| 1.0 + i as f64 / n as f64));
    v /= v.norm();
    let mut lambda = alpha;
    for _ in 0..50 {
        let mut w = at.transpose() * (at * &v);
        w += alpha * &v;
        let norm = w.norm();
        if norm < 1e-300 {
            return alpha.max(1e-300);
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    lambda.max(alpha)
}

/// Gram-Schmidt rule for the conjugate direction update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaRule {
    FletcherReeves,
    PolakRibiere,
}

/// Conjugate gradients on the canonical normal system At'At + a I. With exact
/// steps on a quadratic both beta rules coincide; they differ only once
/// arithmetic noise sets in.
pub fn cg_solve(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    gamma_e: &Covariance,
    gamma_x: &Covariance,
    beta_rule: BetaRule,
    iters: usize,
) -> Result<SolveReport> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    check_system(a, y, gamma_e, gamma_x)?;
    let transform = canonical_transform(a, gamma_e, gamma_x)?;
    let at = &transform.a_tilde;
    let yt = transform.map_y(y);
    let n = at.ncols();
    let mut x = DVector::zeros(n);
    let mut s = at.transpose() * &yt;
    let scale = s.norm().max(1.0);
    let mut c = s.clone();
    let mut objective = Vec::with_capacity(iters + 1);
    objective.push(plain_objective(at, &yt, alpha, &x));
    let mut termination = Termination::Budget;
    let mut steps = 0;
    for _ in 0..iters {
        if s.norm() <= 1e-14 * scale {
            termination = Termination::Converged;
            break;
        }
        let ac = at * &c;
        let denom = ac.dot(&ac) + alpha * c.dot(&c);
        if denom <= 0.0 {
            termination = Termination::Converged;
            break;
        }
        let tau = s.dot(&c) / denom;
        x += tau * &c;
        let s_next = &s - tau * (at.transpose() * ac + alpha * &c);
        let beta = match beta_rule {
            BetaRule::FletcherReeves => s_next.dot(&s_next) / s.dot(&s),
            BetaRule::PolakRibiere => s_next.dot(&(&s_next - &s)) / s.dot(&s),
        };
        let step_norm = tau.abs() * c.norm();
        c = &s_next + beta * c;
        s = s_next;
        steps += 1;
        let obj = plain_objective(at, &yt, alpha, &x);
        let prev = *objective.last().unwrap();
        objective.push(obj);
        if stalled(prev, obj, step_norm, x.norm()) {
            termination = Termination::Stalled;
            break;
        }
    }
    Ok(SolveReport {
        x: transform.unmap_x(&x)?,
        iterations: steps,
        objective,
        termination,
    })
}

/// Regularized Krylov basis in the original parameters. The unregularized
/// sequence is the power sequence v_{j} = (Gx A' Ge^-1 A) v_{j-1} from
/// v_0 = Gx A' Ge^-1 y; the regularized basis folds alpha in additively,
/// v_a_{j} = v_{j} + a v_a_{j-1}, which telescopes to
/// sum_{j'} a^{j'} (At'At)^{j-j'} At'yt in canonical variables. Folding
/// alpha into the operator instead would pick up binomial coefficients and
/// span the same space with a different, worse-conditioned basis.
pub fn krylov_basis(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    gamma_e: &Covariance,
    gamma_x: &Covariance,
    dim: usize,
) -> Result<Vec<DVector<f64>>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("krylov basis needs dim >= 1".into()));
    }
    check_system(a, y, gamma_e, gamma_x)?;
    let mut basis = Vec::with_capacity(dim);
    let mut plain = gamma_x.gamma_apply(&(a.transpose() * gamma_e.precision_apply(y)));
    basis.push(plain.clone());
    for j in 1..dim {
        plain = gamma_x.gamma_apply(&(a.transpose() * gamma_e.precision_apply(&(a * &plain))));
        let next = &plain + alpha * &basis[j - 1];
        basis.push(next);
    }
    Ok(basis)
}

/// Diagonals of the algebraic conditioning matrices built from row and
/// column norms of A.
#[derive(Debug, Clone)]
pub struct RowColumnNorms {
    /// 1-norms of the rows (diagonal of R1).
    pub r1: DVector<f64>,
    /// 1-norms of the columns (diagonal of C1).
    pub c1: DVector<f64>,
    /// Squared 2-norms of the rows (diagonal of R2^2 = diag[A A']).
    pub r2_sq: DVector<f64>,
    /// Squared 2-norms of the columns (diagonal of C2^2 = diag[A' A]).
    pub c2_sq: DVector<f64>,
}

pub fn row_column_norms(a: &DMatrix<f64>) -> RowColumnNorms {
    let r1 = DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()));
    let c1 = DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum()));
    let r2_sq = DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.iter().map(|v| v * v).sum()));
    let c2_sq = DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.iter().map(|v| v * v).sum()));
    RowColumnNorms { r1, c1, r2_sq, c2_sq }
}

/// Algebraic row-action family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowActionVariant {
    /// Kaczmarz sweeps over rows in seeded random order.
    Art,
    /// Simultaneous update x += tau C1^-1 A' R1^-1 (y - A x); needs A >= 0.
    Sart,
    /// Simultaneous update x += tau A' R2^-2 (y - A x).
    Sirt,
}

/// ART / SART / SIRT. `relaxation` is the per-update step (the classic
/// choice 1.0 is the default everywhere in the CLI); one sweep touches every
/// row once (ART) or all rows at once (SART, SIRT). The objective trace is
/// the unweighted data misfit 1/2 ||y - A x||^2 per sweep.
pub fn row_action(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    variant: RowActionVariant,
    relaxation: f64,
    sweeps: usize,
    shuffle_seed: u64,
) -> Result<SolveReport> {
    if y.len() != a.nrows() {
        return Err(Error::InvalidArgument(format!(
            "A has {} rows but y has {} entries",
            a.nrows(),
            y.len()
        )));
    }
    if !(relaxation > 0.0) || !relaxation.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "relaxation must be positive, got {relaxation}"
        )));
    }
    if variant == RowActionVariant::Sart && a.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(
            "SART needs a nonnegative system matrix".into(),
        ));
    }
    let norms = row_column_norms(a);
    let (m, n) = (a.nrows(), a.ncols());
    let mut x = DVector::zeros(n);
    let misfit = |x: &DVector<f64>| {
        let r = y - a * x;
        0.5 * r.dot(&r)
    };
    let mut objective = Vec::with_capacity(sweeps + 1);
    objective.push(misfit(&x));
    let mut rng = ChaCha12Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut termination = Termination::Budget;
    let mut done = 0;
    for _ in 0..sweeps {
        let x_before = x.clone();
        match variant {
            RowActionVariant::Art => {
                order.shuffle(&mut rng);
                for &i in &order {
                    let row = a.row(i);
                    let denom = norms.r2_sq[i];
                    if denom <= 0.0 {
                        continue;
                    }
                    let gap = y[i] - row.transpose().dot(&x);
                    let scale = relaxation * gap / denom;
                    for j in 0..n {
                        x[j] += scale * row[j];
                    }
                }
            }
            RowActionVariant::Sart => {
                let mut r = y - a * &x;
                for i in 0..m {
                    if norms.r1[i] > 0.0 {
                        r[i] /= norms.r1[i];
                    }
                }
                let mut step = a.transpose() * r;
                for j in 0..n {
                    if norms.c1[j] > 0.0 {
                        step[j] /= norms.c1[j];
                    }
                }
                x += relaxation * step;
            }
            RowActionVariant::Sirt => {
                let mut r = y - a * &x;
                for i in 0..m {
                    if norms.r2_sq[i] > 0.0 {
                        r[i] /= norms.r2_sq[i];
                    }
                }
                x += relaxation * (a.transpose() * r);
            }
        }
        done += 1;
        let obj = misfit(&x);
        let prev = *objective.last().unwrap();
        objective.push(obj);
        let moved = (&x - x_before).norm();
        if obj <= 1e-28 || stalled(prev, obj, moved, x.norm()) {
            termination = if obj <= 1e-28 {
                Termination::Converged
            } else {
                Termination::Stalled
            };
            break;
        }
    }
    Ok(SolveReport {
        x,
        iterations: done,
        objective,
        termination,
    })
}

/// Multiplicative family; meaningful only for nonnegative systems, which in
/// this codebase means dc (omega = 0) data where the FEM kernels are real.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplicativeVariant {
    /// x <- x (*) exp[A' log(y / Ax)].
    Mart,
    /// x <- x / (A'1) (*) A'(y / Ax).
    Mlem,
    /// MLEM with the prior gradient added to the normalization.
    MapEm,
}

/// MART / MLEM / MAP-EM from a strictly positive starting point (all ones
/// when `x0` is None). `prior_grad` is the derivative of the regularizer,
/// used only by MAP-EM. The objective trace is the KL divergence
/// sum[y log(y/Ax) - y + Ax] for MLEM and MAP-EM, and the log-residual
/// 1/2||log y - log Ax||^2 for MART.
pub fn multiplicative(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    variant: MultiplicativeVariant,
    alpha: f64,
    prior_grad: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>>,
    x0: Option<&DVector<f64>>,
    iters: usize,
) -> Result<SolveReport> {
    if y.len() != a.nrows() {
        return Err(Error::InvalidArgument(format!(
            "A has {} rows but y has {} entries",
            a.nrows(),
            y.len()
        )));
    }
    if a.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(
            "multiplicative methods need a nonnegative system matrix".into(),
        ));
    }
    if y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(
            "multiplicative methods need strictly positive data".into(),
        ));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    let n = a.ncols();
    let mut x = match x0 {
        Some(v) => {
            if v.len() != n || v.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::InvalidArgument(
                    "starting point must be strictly positive of matching size".into(),
                ));
            }
            v.clone()
        }
        None => DVector::from_element(n, 1.0),
    };
    let sensitivity = a.transpose() * DVector::from_element(a.nrows(), 1.0);
    let objective_of = |x: &DVector<f64>| -> Result<f64> {
        let ax = a * x;
        if ax.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::SingularEvaluation(
                "forward projection lost positivity".into(),
            ));
        }
        Ok(match variant {
            MultiplicativeVariant::Mart => {
                let mut acc = 0.0;
                for i in 0..y.len() {
                    let d = (y[i] / ax[i]).ln();
                    acc += 0.5 * d * d;
                }
                acc
            }
            _ => {
                let mut acc = 0.0;
                for i in 0..y.len() {
                    acc += y[i] * (y[i] / ax[i]).ln() - y[i] + ax[i];
                }
                acc
            }
        })
    };
    let mut objective = Vec::with_capacity(iters + 1);
    objective.push(objective_of(&x)?);
    let mut termination = Termination::Budget;
    let mut steps = 0;
    for _ in 0..iters {
        let ax = a * &x;
        if ax.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::SingularEvaluation(
                "forward projection lost positivity".into(),
            ));
        }
        let x_before = x.clone();
        match variant {
            MultiplicativeVariant::Mart => {
                let logratio =
                    DVector::from_iterator(y.len(), y.iter().zip(ax.iter()).map(|(yi, ai)| (yi / ai).ln()));
                let expo = a.transpose() * logratio;
                for j in 0..n {
                    x[j] *= expo[j].exp();
                }
            }
            MultiplicativeVariant::Mlem | MultiplicativeVariant::MapEm => {
                let ratio =
                    DVector::from_iterator(y.len(), y.iter().zip(ax.iter()).map(|(yi, ai)| yi / ai));
                let back = a.transpose() * ratio;
                let denom = if variant == MultiplicativeVariant::MapEm {
                    let grad = match prior_grad {
                        Some(g) => g(&x),
                        None => DVector::zeros(n),
                    };
                    &sensitivity + alpha * grad
                } else {
                    sensitivity.clone()
                };
                for j in 0..n {
                    if denom[j] > 0.0 {
                        x[j] *= back[j] / denom[j];
                    }
                }
            }
        }
        if x.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::SingularEvaluation(
                "iterate lost strict positivity".into(),
            ));
        }
        steps += 1;
        let obj = objective_of(&x)?;
        let prev = *objective.last().unwrap();
        objective.push(obj);
        if stalled(prev, obj, (&x - x_before).norm(), x.norm()) {
            termination = Termination::Stalled;
            break;
        }
    }
    Ok(SolveReport {
        x,
        iterations: steps,
        objective,
        termination,
    })
}
