//! Ball smoothing of nonsmooth PGD dynamics.
//!
//! `f̃(z) = E_{q ∼ Unif(B)}[f(z + δq)]` is evaluated with a fixed quadrature
//! rule. Its gradient uses the sphere identity
//! `∇f̃(z) = (m/2δ) E_{u ∼ Unif(S)}[(f(z + δu) − f(z − δu)) u]`, and the
//! difference between the estimates at `n` and `2n` directions is reported
//! as the quadrature error budget.

pub mod quadrature;

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::linearization::{InputBox, JacobianPair};
use crate::problem::{ConstraintSet, ProblemSpec};
use crate::sls::inf_norm;

pub use quadrature::{ball_quadrature, sphere_quadrature, QuadratureRule};

/// Which inputs the smoothing ball perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingBall {
    /// Only the state `ζ = (ξ, θ)`; the steplength is held at its value.
    /// Appropriate when the steplength never deviates from nominal.
    State,
    /// The full input `(ζ, α)`.
    Full,
}

impl SmoothingBall {
    /// Ball dimension `m`.
    pub fn dim(&self, n: usize, d: usize) -> usize {
        match self {
            SmoothingBall::State => n + d,
            SmoothingBall::Full => n + d + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingParams {
    pub delta: f64,
    pub c_delta: f64,
    /// Nodes of the ball rule and directions of the coarse sphere rule.
    pub node_count: usize,
    pub seed: u64,
    /// Largest acceptable quadrature error for a Jacobian row.
    pub eps_cap: f64,
    pub ball: SmoothingBall,
}

impl SmoothingParams {
    pub fn new(
        delta: f64,
        c_delta: f64,
        node_count: usize,
        seed: u64,
        eps_cap: f64,
        ball: SmoothingBall,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta <= c_delta && c_delta.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!(
                "smoothing radius must satisfy 0 < delta <= C_delta (delta = {delta}, C_delta = {c_delta})"
            )));
        }
        if !(eps_cap >= 0.0) {
            return Err(Error::InvalidInput("eps_cap must be nonnegative".into()));
        }
        Ok(Self {
            delta,
            c_delta,
            node_count,
            seed,
            eps_cap,
            ball,
        })
    }

    /// δ = C_δ = 0.1 with 4096 nodes, seed 0, cap 1e-3.
    pub fn default_with(ball: SmoothingBall) -> Self {
        Self::new(0.1, 0.1, 4096, 0, 1e-3, ball).expect("defaults are valid")
    }
}

/// A smoothed map with quadrature rules prepared once.
#[derive(Debug, Clone)]
pub struct Smoother<'a> {
    spec: &'a ProblemSpec,
    params: SmoothingParams,
    m: usize,
    ball: QuadratureRule,
    ball_coarse: QuadratureRule,
    sphere: QuadratureRule,
    sphere_fine: QuadratureRule,
}

/// Smoothed Jacobians plus the per-row quadrature error of `[Ã | B̃]`
/// measured in the 1-norm over the smoothed inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedJacobian {
    pub pair: JacobianPair,
    pub eps_rows: DVector<f64>,
}

impl SmoothedJacobian {
    pub fn eps_max(&self) -> f64 {
        self.eps_rows.max()
    }
}

impl<'a> Smoother<'a> {
    pub fn new(spec: &'a ProblemSpec, params: &SmoothingParams) -> Result<Self> {
        let m = params.ball.dim(spec.n(), spec.d());
        let nc = params.node_count.max(2 * (m + 1));
        Ok(Self {
            spec,
            m,
            ball: ball_quadrature(m, nc, params.seed)?,
            ball_coarse: ball_quadrature(m, nc / 2, params.seed)?,
            sphere: sphere_quadrature(m, nc, params.seed)?,
            sphere_fine: sphere_quadrature(m, 2 * nc, params.seed)?,
            params: params.clone(),
        })
    }

    pub fn params(&self) -> &SmoothingParams {
        &self.params
    }

    pub fn ball_dim(&self) -> usize {
        self.m
    }

    /// `f_PGD` at `(ζ, α)` shifted by `δ·q`.
    fn shifted(
        &self,
        zeta: &DVector<f64>,
        alpha: f64,
        q: &[f64],
        sign: f64,
    ) -> Result<DVector<f64>> {
        let n = self.spec.n();
        let s = zeta.len();
        let step = sign * self.params.delta;
        let z = DVector::from_fn(s, |i, _| zeta[i] + step * q[i]);
        let a = if self.m > s {
            alpha + step * q[s]
        } else {
            alpha
        };
        let xi = z.rows(0, n).into_owned();
        let theta = z.rows(n, s - n).into_owned();
        self.spec.pgd_map(&xi, &theta, a)
    }

    fn average(
        &self,
        rule: &QuadratureRule,
        zeta: &DVector<f64>,
        alpha: f64,
    ) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.spec.n());
        for q in rule.iter() {
            acc += self.shifted(zeta, alpha, q, 1.0)?;
        }
        Ok(acc * rule.weight())
    }

    /// `f̃(ζ, α) = (f̃_PGD, θ)`.
    pub fn value(&self, zeta: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
        Ok(self.value_with_error(zeta, alpha)?.0)
    }

    /// Smoothed value and the ∞-norm difference against the half-size rule.
    pub fn value_with_error(&self, zeta: &DVector<f64>, alpha: f64) -> Result<(DVector<f64>, f64)> {
        let (xi, theta) = self.spec.split_state(zeta)?;
        let _ = xi;
        let fine = self.average(&self.ball, zeta, alpha)?;
        let coarse = self.average(&self.ball_coarse, zeta, alpha)?;
        let eps = (&fine - coarse).amax();
        Ok((self.spec.state(&fine, &theta), eps))
    }

    /// Sphere estimate of the smoothed gradient, an n × m matrix.
    ///
    /// The identity `∇f̃ = (m/δ) E[f(z + δu) uᵀ]` is evaluated with
    /// antithetic pairs, and the factor `m = (E[uuᵀ])⁻¹` is replaced by the
    /// inverse of the rule's own second-moment matrix. Both agree in the
    /// limit; the normalized form is exact on quadratic maps for any rule.
    fn gradient(
        &self,
        rule: &QuadratureRule,
        zeta: &DVector<f64>,
        alpha: f64,
    ) -> Result<DMatrix<f64>> {
        let n = self.spec.n();
        let mut g = DMatrix::zeros(n, self.m);
        let mut moment = DMatrix::zeros(self.m, self.m);
        for u in rule.iter() {
            let diff = self.shifted(zeta, alpha, u, 1.0)? - self.shifted(zeta, alpha, u, -1.0)?;
            for c in 0..self.m {
                if u[c] != 0.0 {
                    g.column_mut(c).axpy(u[c], &diff, 1.0);
                    for r in 0..self.m {
                        moment[(r, c)] += u[r] * u[c];
                    }
                }
            }
        }
        let inv = moment
            .try_inverse()
            .ok_or(Error::Singular("sphere rule second moment"))?;
        Ok(g * inv / (2.0 * self.params.delta))
    }

    /// Jacobians of the smoothed augmented map.
    ///
    /// With the state-only ball the steplength column is the central
    /// difference of `f̃` in `α`; its error is not part of `eps_rows` since
    /// the state-only ball is only used when `Δα = 0`.
    pub fn jacobians(&self, zeta: &DVector<f64>, alpha: f64) -> Result<SmoothedJacobian> {
        let (n, d) = (self.spec.n(), self.spec.d());
        let s = n + d;
        let coarse = self.gradient(&self.sphere, zeta, alpha)?;
        let fine = self.gradient(&self.sphere_fine, zeta, alpha)?;
        let eps_xi: Vec<f64> = (0..n)
            .map(|i| (fine.row(i) - coarse.row(i)).abs().sum())
            .collect();

        let mut a = DMatrix::zeros(s, s);
        a.view_mut((0, 0), (n, s)).copy_from(&fine.columns(0, s));
        for j in 0..d {
            a[(n + j, n + j)] = 1.0;
        }
        let mut b = DMatrix::zeros(s, 1);
        if self.m > s {
            b.view_mut((0, 0), (n, 1)).copy_from(&fine.column(s));
        } else {
            let h = 1e-4 * alpha.abs().max(1.0);
            let fp = self.average(&self.ball, zeta, alpha + h)?;
            let fm = self.average(&self.ball, zeta, alpha - h)?;
            b.view_mut((0, 0), (n, 1))
                .copy_from(&((fp - fm) / (2.0 * h)));
        }
        let mut eps_rows = DVector::zeros(s);
        for (i, e) in eps_xi.into_iter().enumerate() {
            eps_rows[i] = e;
        }
        let out = SmoothedJacobian {
            pair: JacobianPair { a, b },
            eps_rows,
        };
        let eps = out.eps_max();
        if eps > self.params.eps_cap {
            return Err(Error::QuadratureBudgetExceeded {
                eps,
                cap: self.params.eps_cap,
            });
        }
        Ok(out)
    }
}

/// One-shot smoothed value of the augmented map.
pub fn smoothed_dynamics(
    spec: &ProblemSpec,
    zeta: &DVector<f64>,
    alpha: f64,
    params: &SmoothingParams,
) -> Result<DVector<f64>> {
    Smoother::new(spec, params)?.value(zeta, alpha)
}

/// One-shot smoothed Jacobians with their quadrature error.
pub fn smoothed_jacobians(
    spec: &ProblemSpec,
    zeta: &DVector<f64>,
    alpha: f64,
    params: &SmoothingParams,
) -> Result<SmoothedJacobian> {
    Smoother::new(spec, params)?.jacobians(zeta, alpha)
}

fn projection_gain(spec: &ProblemSpec) -> f64 {
    match &spec.constraint {
        ConstraintSet::Affine(a) => inf_norm(a.projector()),
        // identity, or coordinatewise clamping which is nonexpansive in every norm
        ConstraintSet::Free | ConstraintSet::Box(_) => 1.0,
    }
}

fn row_lipschitz(
    spec: &ProblemSpec,
    xi: &[Interval],
    theta: &[Interval],
    alpha: Interval,
    with_alpha: bool,
) -> f64 {
    let (n, d) = (spec.n(), spec.d());
    let obj = &spec.objective;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        // ∂g_i/∂ξ_a = δ_ia − α H(θ)_ia
        let mut row = 0.0;
        let mut grad_i = Interval::point(obj.g0()[i]);
        for a in 0..n {
            let mut h = Interval::point(obj.h0()[(i, a)]);
            for (t, hj) in theta.iter().zip(obj.h_params()) {
                if hj[(i, a)] != 0.0 {
                    h = h + t.scale(hj[(i, a)]);
                }
            }
            let id = if i == a { 1.0 } else { 0.0 };
            row += (Interval::point(id) - alpha * h).mag();
            grad_i = grad_i + h * xi[a];
        }
        // ∂g_i/∂θ_j = −α (H_j ξ + g_j)_i
        for j in 0..d {
            let mut c = Interval::point(obj.g_params()[j][i]);
            for a in 0..n {
                let v = obj.h_params()[j][(i, a)];
                if v != 0.0 {
                    c = c + xi[a].scale(v);
                }
            }
            row += (alpha * c).mag();
            grad_i = grad_i + theta[j] * Interval::point(obj.g_params()[j][i]);
        }
        // ∂g_i/∂α = −(H(θ)ξ + g(θ))_i
        if with_alpha {
            row += grad_i.mag();
        }
        worst = worst.max(row);
    }
    worst
}

/// Largest parameter dimension for which the corners of Θ are enumerated.
const MAX_CORNER_DIM: usize = 10;

fn lipschitz_impl(spec: &ProblemSpec, bx: &InputBox, with_alpha: bool) -> Result<f64> {
    let (n, d) = (spec.n(), spec.d());
    if bx.xi.len() != n || bx.theta.len() != d {
        return Err(Error::DimensionMismatch {
            context: "lipschitz box",
            expected: n + d,
            found: bx.xi.len() + bx.theta.len(),
        });
    }
    // Every partial derivative is affine in each scalar input separately, so
    // the row sum of their magnitudes is convex in each of α and θ_j and
    // peaks at a corner. The ξ dependence is handled by intervals.
    let mut worst: f64 = 0.0;
    let theta_corners: Vec<Vec<Interval>> = if d <= MAX_CORNER_DIM {
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|j| {
                        Interval::point(if mask >> j & 1 == 1 {
                            bx.theta[j].hi()
                        } else {
                            bx.theta[j].lo()
                        })
                    })
                    .collect()
            })
            .collect()
    } else {
        alloc::vec![bx.theta.clone()]
    };
    for a in [bx.alpha.lo(), bx.alpha.hi()] {
        for th in &theta_corners {
            worst = worst.max(row_lipschitz(
                spec,
                &bx.xi,
                th,
                Interval::point(a),
                with_alpha,
            ));
        }
    }
    Ok(worst * projection_gain(spec) * (1.0 + 4.0 * crate::interval::OUTWARD_SLACK))
}

/// ∞-norm Lipschitz constant of the PGD map over `(ξ, θ, α)` in the box.
pub fn lipschitz_constant(spec: &ProblemSpec, bx: &InputBox) -> Result<f64> {
    lipschitz_impl(spec, bx, true)
}

/// ∞-norm Lipschitz constant in `(ξ, θ)` with `α` ranging over the box.
pub fn state_lipschitz_constant(spec: &ProblemSpec, bx: &InputBox) -> Result<f64> {
    lipschitz_impl(spec, bx, false)
}

/// Constants entering the smoothed disturbance bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedConstants {
    pub ell: f64,
    /// `ℓ·δ`
    pub smoothing_error: f64,
    /// `m^{3/2} ℓ / δ` on ξ-coordinates, zero on θ-coordinates.
    pub mu_tilde: DVector<f64>,
}

pub fn smoothed_constants(
    ell: f64,
    delta: f64,
    ball_dim: usize,
    n: usize,
    d: usize,
) -> Result<SmoothedConstants> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(
            "smoothing radius must be positive".into(),
        ));
    }
    if !(ell >= 0.0) {
        return Err(Error::InvalidInput(
            "Lipschitz constant must be nonnegative".into(),
        ));
    }
    let mt = libm::pow(ball_dim as f64, 1.5) * ell / delta;
    let mu_tilde = DVector::from_fn(n + d, |i, _| if i < n { mt } else { 0.0 });
    Ok(SmoothedConstants {
        ell,
        smoothing_error: ell * delta,
        mu_tilde,
    })
}

/// Box used for the smoothing Lipschitz constant: the spec box with the
/// smoothed inputs widened by `C_δ`.
pub fn lipschitz_box(spec: &ProblemSpec, params: &SmoothingParams) -> InputBox {
    let mut bx = InputBox::from_spec(spec).inflate_state(params.c_delta);
    if params.ball == SmoothingBall::Full {
        bx.alpha = bx.alpha.inflate(params.c_delta);
    }
    bx
}
