//! Parametric quadratic programs and their projected gradient dynamics.
//!
//! The objective is `J(ξ, θ) = ½ ξᵀ H(θ) ξ + g(θ)ᵀ ξ` with
//! `H(θ) = H₀ + Σ θᵢ Hᵢ` and `g(θ) = g₀ + Σ θᵢ gᵢ`. One PGD step is
//! `ξ⁺ = proj(ξ − α ∇J(ξ, θ))`, and the augmented map used for reachability
//! carries the parameter along unchanged: `f(ξ, θ, α) = (ξ⁺, θ)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
/// Absolute slack accepted when checking membership of iterates and steps.
pub const FEASIBILITY_TOL: f64 = 1e-9;

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

fn check_symmetric(name: String, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(name));
    }
    Ok(())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = m.clone().symmetric_eigen();
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Axis-aligned parameter box Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ParamBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_len("ParamBox bounds", lower.len(), upper.len())?;
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] <= upper[i]) {
                return Err(Error::InvalidInput(format!(
                    "parameter bound {i}: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, lower),
            DVector::from_element(1, upper),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// Euclidean diameter `‖upper − lower‖₂`.
    pub fn diameter(&self) -> f64 {
        (&self.upper - &self.lower).norm()
    }

    /// Centre of the box; minimizes the worst-case distance to any other point.
    pub fn chebyshev_center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && (0..self.dim()).all(|i| {
                self.lower[i] - FEASIBILITY_TOL <= theta[i]
                    && theta[i] <= self.upper[i] + FEASIBILITY_TOL
            })
    }

    /// All `2^d` corners. Only meant for small `d`.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                DVector::from_iterator(
                    d,
                    (0..d).map(|i| {
                        if mask >> i & 1 == 1 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    }),
                )
            })
            .collect()
    }
}

/// `J(ξ, θ) = ½ ξᵀ(H₀ + Σθᵢ Hᵢ)ξ + (g₀ + Σθᵢ gᵢ)ᵀξ` with PSD increments `Hᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricQuadratic {
    h0: DMatrix<f64>,
    h_params: Vec<DMatrix<f64>>,
    g0: DVector<f64>,
    g_params: Vec<DVector<f64>>,
}

impl ParametricQuadratic {
    pub fn new(
        h0: DMatrix<f64>,
        h_params: Vec<DMatrix<f64>>,
        g0: DVector<f64>,
        g_params: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = h0.nrows();
        check_len("H0 columns", n, h0.ncols())?;
        check_len("g0", n, g0.len())?;
        check_len("parameter term count", h_params.len(), g_params.len())?;
        check_symmetric("H0".into(), &h0)?;
        for (i, (h, g)) in h_params.iter().zip(&g_params).enumerate() {
            check_len("H_i rows", n, h.nrows())?;
            check_len("H_i columns", n, h.ncols())?;
            check_len("g_i", n, g.len())?;
            check_symmetric(format!("H_{}", i + 1), h)?;
            let (lmin, _) = eigen_extremes(h);
            if lmin < -PSD_TOL * h.amax().max(1.0) {
                return Err(Error::NotPositiveSemidefinite {
                    index: i + 1,
                    min_eigenvalue: lmin,
                });
            }
        }
        Ok(Self {
            h0,
            h_params,
            g0,
            g_params,
        })
    }

    /// Variable dimension `n`.
    pub fn n(&self) -> usize {
        self.h0.nrows()
    }

    /// Parameter dimension `d`.
    pub fn d(&self) -> usize {
        self.h_params.len()
    }

    pub fn h0(&self) -> &DMatrix<f64> {
        &self.h0
    }

    pub fn h_params(&self) -> &[DMatrix<f64>] {
        &self.h_params
    }

    pub fn g0(&self) -> &DVector<f64> {
        &self.g0
    }

    pub fn g_params(&self) -> &[DVector<f64>] {
        &self.g_params
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        check_len("theta", self.d(), theta.len())
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let mut h = self.h0.clone();
        for (t, hi) in theta.iter().zip(&self.h_params) {
            h += hi * *t;
        }
        Ok(h)
    }

    pub fn linear_term(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let mut g = self.g0.clone();
        for (t, gi) in theta.iter().zip(&self.g_params) {
            g += gi * *t;
        }
        Ok(g)
    }

    pub fn value(&self, xi: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        check_len("xi", self.n(), xi.len())?;
        let h = self.hessian(theta)?;
        let g = self.linear_term(theta)?;
        Ok(0.5 * xi.dot(&(h * xi)) + g.dot(xi))
    }

    /// `∇_ξ J(ξ, θ) = H(θ)ξ + g(θ)`.
    pub fn grad(&self, xi: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("xi", self.n(), xi.len())?;
        Ok(self.hessian(theta)? * xi + self.linear_term(theta)?)
    }

    /// Uniform strong convexity and smoothness constants `(m, L)` over Θ.
    ///
    /// With PSD increments, `H(θ)` is monotone in every `θᵢ` in the Loewner
    /// order, so `λmin` is smallest at the lower corner of Θ and `λmax` is
    /// largest at the upper corner.
    pub fn convexity_bounds(&self, theta_box: &ParamBox) -> Result<(f64, f64)> {
        self.check_theta(theta_box.lower())?;
        let (m, _) = eigen_extremes(&self.hessian(theta_box.lower())?);
        let (_, l) = eigen_extremes(&self.hessian(theta_box.upper())?);
        if !(m > 0.0) || !m.is_finite() || !l.is_finite() {
            return Err(Error::NotStronglyConvex { m });
        }
        Ok((m, l))
    }
}

/// Affine subspace `{ξ : Mξ = b}` with cached projector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    m: DMatrix<f64>,
    b: DVector<f64>,
    projector: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineSubspace {
    /// Requires `M` to have full row rank.
    pub fn new(m: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_len("affine right-hand side", m.nrows(), b.len())?;
        let n = m.ncols();
        let gram = &m * m.transpose();
        let (lmin, lmax) = eigen_extremes(&gram);
        if !(lmin > 1e-12 * lmax.max(f64::MIN_POSITIVE)) {
            return Err(Error::RankDeficient);
        }
        let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
        let mt_inv = chol.solve(&m); // (MMᵀ)⁻¹M
        let projector = DMatrix::identity(n, n) - m.transpose() * &mt_inv;
        let offset = mt_inv.transpose() * &b; // Mᵀ(MMᵀ)⁻¹b
        Ok(Self {
            m,
            b,
            projector,
            offset,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    /// `P = I − Mᵀ(MMᵀ)⁻¹M`.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// Minimum-norm point of the subspace, `Mᵀ(MMᵀ)⁻¹b`.
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }
}

/// Coordinate box with extended-real bounds; `±∞` encodes half-spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_len("box constraint bounds", lo.len(), hi.len())?;
        for i in 0..lo.len() {
            if lo[i].is_nan() || hi[i].is_nan() || lo[i] > hi[i] || lo[i] == f64::INFINITY {
                return Err(Error::InvalidInput(format!(
                    "box constraint {i}: [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Free,
    Affine(AffineSubspace),
    Box(BoxBounds),
}

impl ConstraintSet {
    /// Euclidean projection onto the set.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintSet::Free => x.clone(),
            ConstraintSet::Affine(a) => &a.projector * x + &a.offset,
            ConstraintSet::Box(b) => DVector::from_iterator(
                x.len(),
                x.iter()
                    .zip(b.lo.iter().zip(b.hi.iter()))
                    .map(|(v, (lo, hi))| v.max(*lo).min(*hi)),
            ),
        }
    }

    /// Free and affine sets have affine projections; boxes do not.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, ConstraintSet::Box(_))
    }

    /// Linear part of the (affine) projection, `None` for boxes.
    pub fn linear_projector(&self, n: usize) -> Option<DMatrix<f64>> {
        match self {
            ConstraintSet::Free => Some(DMatrix::identity(n, n)),
            ConstraintSet::Affine(a) => Some(a.projector.clone()),
            ConstraintSet::Box(_) => None,
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            ConstraintSet::Free => true,
            ConstraintSet::Affine(a) => (&a.m * x - &a.b).amax() <= tol,
            ConstraintSet::Box(b) => x
                .iter()
                .zip(b.lo.iter().zip(b.hi.iter()))
                .all(|(v, (lo, hi))| *lo - tol <= *v && *v <= *hi + tol),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            ConstraintSet::Free => None,
            ConstraintSet::Affine(a) => Some(a.m.ncols()),
            ConstraintSet::Box(b) => Some(b.lo.len()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConstraintSet::Free => "free",
            ConstraintSet::Affine(_) => "affine",
            ConstraintSet::Box(_) => "box",
        }
    }
}

/// Admissible steplengths `[c_α, C_α]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteplengthInterval {
    lower: f64,
    upper: f64,
}

impl SteplengthInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
            return Err(Error::InvalidSteplengthInterval {
                lower,
                upper,
                reason: "need 0 < c_alpha <= C_alpha < inf",
            });
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, alpha: f64) -> bool {
        self.lower - FEASIBILITY_TOL <= alpha && alpha <= self.upper + FEASIBILITY_TOL
    }

    /// Checks `C_α < 2/L`. For `0 < m ≤ L` this is equivalent to a
    /// contraction rate below one, so a violation is reported as such.
    pub fn check_smoothness(&self, m: f64, l: f64) -> Result<()> {
        if self.upper < 2.0 / l {
            Ok(())
        } else {
            let gamma = [self.lower, self.upper]
                .iter()
                .map(|&a| crate::convergence::step_rate(m, l, a))
                .fold(0.0, f64::max);
            Err(Error::ContractionNotBelowOne { gamma })
        }
    }
}

/// Everything certification needs: objective, constraint, Θ, initial
/// iterate, steplengths, horizon and the prior box bounding all iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub objective: ParametricQuadratic,
    pub constraint: ConstraintSet,
    pub theta_box: ParamBox,
    pub xi0: DVector<f64>,
    pub steps: SteplengthInterval,
    pub horizon: usize,
    pub iterate_lower: DVector<f64>,
    pub iterate_upper: DVector<f64>,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        objective: ParametricQuadratic,
        constraint: ConstraintSet,
        theta_box: ParamBox,
        xi0: DVector<f64>,
        steps: SteplengthInterval,
        horizon: usize,
        iterate_lower: DVector<f64>,
        iterate_upper: DVector<f64>,
    ) -> Result<Self> {
        let n = objective.n();
        check_len("parameter dimension", objective.d(), theta_box.dim())?;
        check_len("xi0", n, xi0.len())?;
        check_len("iterate lower bound", n, iterate_lower.len())?;
        check_len("iterate upper bound", n, iterate_upper.len())?;
        if let Some(cn) = constraint.dim() {
            check_len("constraint dimension", n, cn)?;
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        for i in 0..n {
            if !(iterate_lower[i] <= iterate_upper[i]) {
                return Err(Error::InvalidInput(format!(
                    "iterate box coordinate {i} is empty"
                )));
            }
            if !(iterate_lower[i] <= xi0[i] && xi0[i] <= iterate_upper[i]) {
                return Err(Error::InvalidInput(format!(
                    "xi0[{i}] = {} outside the iterate box",
                    xi0[i]
                )));
            }
        }
        let scale = xi0.amax().max(1.0);
        if !constraint.contains(&xi0, FEASIBILITY_TOL * scale) {
            return Err(Error::InvalidInput(
                "xi0 is not in the constraint set".into(),
            ));
        }
        let (m, l) = objective.convexity_bounds(&theta_box)?;
        steps.check_smoothness(m, l)?;
        Ok(Self {
            objective,
            constraint,
            theta_box,
            xi0,
            steps,
            horizon,
            iterate_lower,
            iterate_upper,
        })
    }

    pub fn n(&self) -> usize {
        self.objective.n()
    }

    pub fn d(&self) -> usize {
        self.objective.d()
    }

    /// `(m, L)` over the parameter box.
    pub fn convexity_bounds(&self) -> Result<(f64, f64)> {
        self.objective.convexity_bounds(&self.theta_box)
    }

    /// Pre-projection gradient step `ξ − α∇J(ξ, θ)`.
    pub fn gradient_step(
        &self,
        xi: &DVector<f64>,
        theta: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>> {
        Ok(xi - self.objective.grad(xi, theta)? * alpha)
    }

    /// PGD map without the steplength-range check. Used for perturbed
    /// evaluations (smoothing, finite differences).
    pub fn pgd_map(
        &self,
        xi: &DVector<f64>,
        theta: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>> {
        Ok(self
            .constraint
            .project(&self.gradient_step(xi, theta, alpha)?))
    }

    /// One projected gradient step with `α ∈ [c_α, C_α]`.
    pub fn pgd_step(
        &self,
        xi: &DVector<f64>,
        theta: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>> {
        if !self.steps.contains(alpha) {
            return Err(Error::SteplengthOutOfRange {
                alpha,
                lower: self.steps.lower,
                upper: self.steps.upper,
            });
        }
        self.pgd_map(xi, theta, alpha)
    }

    /// Iterates `ξ₀, ξ₁, …, ξ_k` for a fixed parameter.
    pub fn rollout(&self, theta: &DVector<f64>, alphas: &[f64]) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(alphas.len() + 1);
        out.push(self.xi0.clone());
        for &alpha in alphas {
            let next = self.pgd_step(out.last().unwrap(), theta, alpha)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Stacks `(ξ, θ)` into a state `ζ`.
    pub fn state(&self, xi: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        DVector::from_iterator(n + self.d(), xi.iter().chain(theta.iter()).copied())
    }

    /// Splits a state `ζ` into `(ξ, θ)`.
    pub fn split_state(&self, zeta: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.n();
        check_len("state", n + self.d(), zeta.len())?;
        Ok((
            zeta.rows(0, n).into_owned(),
            zeta.rows(n, self.d()).into_owned(),
        ))
    }

    /// Augmented dynamics `f(ζ, α) = (f_PGD(ξ, θ, α), θ)`.
    pub fn augmented(&self, zeta: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
        let (xi, theta) = self.split_state(zeta)?;
        let next = self.pgd_map(&xi, &theta, alpha)?;
        Ok(self.state(&next, &theta))
    }
}
