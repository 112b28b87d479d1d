//! Jacobians of the augmented PGD map, its linearization residual, and
//! interval curvature bounds.
//!
//! For a smooth constraint the map is `f(ξ, θ, α) = P(ξ − α(H(θ)ξ + g(θ))) + c`
//! with a constant projector `P`. Its Hessian in `z = (ξ, θ, α)` only has
//! the cross blocks
//!
//! * `∂²f_i/∂ξ_a∂θ_j = −α (P H_j)_{ia}`
//! * `∂²f_i/∂ξ_a∂α   = −(P H(θ))_{ia}`
//! * `∂²f_i/∂θ_j∂α   = −(P(H_j ξ + g_j))_i`
//!
//! which are enclosed with interval arithmetic over an input box.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::interval::{dot_point_interval, Interval, IntervalMatrix};
use crate::problem::ProblemSpec;

/// Interval box over `(ξ, θ, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub xi: Vec<Interval>,
    pub theta: Vec<Interval>,
    pub alpha: Interval,
}

impl InputBox {
    /// Iterate box × Θ × `[c_α, C_α]`.
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        let xi = (0..spec.n())
            .map(|i| Interval::new(spec.iterate_lower[i], spec.iterate_upper[i]).unwrap())
            .collect();
        let theta = (0..spec.d())
            .map(|i| Interval::new(spec.theta_box.lower()[i], spec.theta_box.upper()[i]).unwrap())
            .collect();
        let alpha = Interval::new(spec.steps.lower(), spec.steps.upper()).unwrap();
        Self { xi, theta, alpha }
    }

    /// Box with every coordinate widened by `r` (the steplength is left alone).
    pub fn inflate_state(&self, r: f64) -> Self {
        Self {
            xi: self.xi.iter().map(|x| x.inflate(r)).collect(),
            theta: self.theta.iter().map(|x| x.inflate(r)).collect(),
            alpha: self.alpha,
        }
    }

    pub fn dim(&self) -> usize {
        self.xi.len() + self.theta.len() + 1
    }

    fn check(&self, spec: &ProblemSpec) -> Result<()> {
        if self.xi.len() != spec.n() {
            return Err(Error::DimensionMismatch {
                context: "input box xi",
                expected: spec.n(),
                found: self.xi.len(),
            });
        }
        if self.theta.len() != spec.d() {
            return Err(Error::DimensionMismatch {
                context: "input box theta",
                expected: spec.d(),
                found: self.theta.len(),
            });
        }
        Ok(())
    }
}

/// Linearization `(A, B)` of the augmented map at a nominal point.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Per-output gradient-Lipschitz constants (1-norm vs ∞-norm).
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBounds {
    pub mu: DVector<f64>,
}

impl CurvatureBounds {
    pub fn zeros(dim: usize) -> Self {
        Self {
            mu: DVector::zeros(dim),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { mu: &self.mu * s }
    }
}

fn projector(spec: &ProblemSpec) -> Result<DMatrix<f64>> {
    spec.constraint
        .linear_projector(spec.n())
        .ok_or(Error::NonSmoothConstraint)
}

/// Exact `(A, B)` of the augmented map at `(ζ̂, α̂)` for smooth constraints.
pub fn jacobians(
    spec: &ProblemSpec,
    zeta_hat: &DVector<f64>,
    alpha_hat: f64,
) -> Result<JacobianPair> {
    let p = projector(spec)?;
    let (xi, theta) = spec.split_state(zeta_hat)?;
    let (n, d) = (spec.n(), spec.d());
    let h = spec.objective.hessian(&theta)?;
    let grad = spec.objective.grad(&xi, &theta)?;

    let mut a = DMatrix::zeros(n + d, n + d);
    let top = &p * (DMatrix::identity(n, n) - h * alpha_hat);
    a.view_mut((0, 0), (n, n)).copy_from(&top);
    for j in 0..d {
        let col =
            &p * (&spec.objective.h_params()[j] * &xi + &spec.objective.g_params()[j]) * -alpha_hat;
        a.view_mut((0, n + j), (n, 1)).copy_from(&col);
        a[(n + j, n + j)] = 1.0;
    }
    let mut b = DMatrix::zeros(n + d, 1);
    b.view_mut((0, 0), (n, 1)).copy_from(&(&p * grad * -1.0));
    Ok(JacobianPair { a, b })
}

/// `f(ζ, α) − f(ζ̂, α̂) − AΔζ − BΔα` with `(A, B)` taken at the nominal.
pub fn linearization_residual(
    spec: &ProblemSpec,
    zeta: &DVector<f64>,
    alpha: f64,
    zeta_hat: &DVector<f64>,
    alpha_hat: f64,
) -> Result<DVector<f64>> {
    let jac = jacobians(spec, zeta_hat, alpha_hat)?;
    let f = spec.augmented(zeta, alpha)?;
    let f_hat = spec.augmented(zeta_hat, alpha_hat)?;
    let dz = zeta - zeta_hat;
    Ok(f - f_hat - &jac.a * dz - jac.b.column(0) * (alpha - alpha_hat))
}

/// Products reused by every output coordinate.
struct HessianTerms {
    ph0: DMatrix<f64>,
    ph: Vec<DMatrix<f64>>,
    pg: Vec<DVector<f64>>,
}

impl HessianTerms {
    fn new(spec: &ProblemSpec) -> Result<Self> {
        let p = projector(spec)?;
        Ok(Self {
            ph0: &p * spec.objective.h0(),
            ph: spec.objective.h_params().iter().map(|h| &p * h).collect(),
            pg: spec.objective.g_params().iter().map(|g| &p * g).collect(),
        })
    }

    /// Enclosure of `(P H(θ))_{ia}`.
    fn ph_theta(&self, i: usize, a: usize, theta: &[Interval]) -> Interval {
        let mut acc = Interval::point(self.ph0[(i, a)]);
        for (t, phj) in theta.iter().zip(&self.ph) {
            let v = phj[(i, a)];
            if v != 0.0 {
                acc = acc + t.scale(v);
            }
        }
        acc
    }

    /// Enclosure of `(P H_j ξ + P g_j)_i`.
    fn theta_alpha(&self, i: usize, j: usize, xi: &[Interval]) -> Interval {
        dot_point_interval(self.ph[j].row(i).iter().copied(), xi) + Interval::point(self.pg[j][i])
    }
}

/// Interval enclosure of the Hessian of `f_i` over the box, ordered
/// `(ξ, θ, α)`. Rows of θ-coordinates are identically zero.
pub fn hessian_enclosure(spec: &ProblemSpec, i: usize, bx: &InputBox) -> Result<IntervalMatrix> {
    bx.check(spec)?;
    let (n, d) = (spec.n(), spec.d());
    let dim = n + d + 1;
    let mut out = IntervalMatrix::zeros(dim, dim);
    if i >= n {
        return Ok(out);
    }
    let terms = HessianTerms::new(spec)?;
    let ia = n + d;
    for a in 0..n {
        for j in 0..d {
            let v = (bx.alpha * terms.ph[j][(i, a)]).scale(-1.0);
            out.set(a, n + j, v);
            out.set(n + j, a, v);
        }
        let v = -terms.ph_theta(i, a, &bx.theta);
        out.set(a, ia, v);
        out.set(ia, a, v);
    }
    for j in 0..d {
        let v = -terms.theta_alpha(i, j, &bx.xi);
        out.set(n + j, ia, v);
        out.set(ia, n + j, v);
    }
    Ok(out)
}

/// Full curvature bound over `(ζ, α)`: `μ_i` is an upper bound on the
/// entrywise absolute sum of the Hessian of `f_i` across the box.
pub fn curvature_bounds(spec: &ProblemSpec, bx: &InputBox) -> Result<CurvatureBounds> {
    bx.check(spec)?;
    let terms = HessianTerms::new(spec)?;
    let (n, d) = (spec.n(), spec.d());
    let amag = bx.alpha.mag();
    let mut mu = DVector::zeros(n + d);
    for i in 0..n {
        let mut s = 0.0;
        for a in 0..n {
            for j in 0..d {
                s += amag * libm::fabs(terms.ph[j][(i, a)]);
            }
            s += terms.ph_theta(i, a, &bx.theta).mag();
        }
        for j in 0..d {
            s += terms.theta_alpha(i, j, &bx.xi).mag();
        }
        mu[i] = 2.0 * s * (1.0 + 4.0 * crate::interval::OUTWARD_SLACK);
    }
    Ok(CurvatureBounds { mu })
}

/// Curvature of `f_i` in `ζ` alone with `α` frozen inside `bx.alpha`.
///
/// Valid for the residual whenever `Δα = 0`, which is exactly the zero-gain
/// case where the steplength stays at its nominal.
pub fn state_curvature_bounds(spec: &ProblemSpec, bx: &InputBox) -> Result<CurvatureBounds> {
    bx.check(spec)?;
    let terms = HessianTerms::new(spec)?;
    let (n, d) = (spec.n(), spec.d());
    let amag = bx.alpha.mag();
    let mut mu = DVector::zeros(n + d);
    for i in 0..n {
        let mut s = 0.0;
        for a in 0..n {
            for j in 0..d {
                s += amag * libm::fabs(terms.ph[j][(i, a)]);
            }
        }
        mu[i] = 2.0 * s * (1.0 + 4.0 * crate::interval::OUTWARD_SLACK);
    }
    Ok(CurvatureBounds { mu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng, iv: Interval) -> f64 {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        iv.lo() + iv.width() * u
    }

    fn sample(rng: &mut ChaCha8Rng, bx: &InputBox) -> (DVector<f64>, f64) {
        let z: Vec<f64> = bx
            .xi
            .iter()
            .chain(&bx.theta)
            .map(|iv| uniform(rng, *iv))
            .collect();
        (DVector::from_vec(z), uniform(rng, bx.alpha))
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn scalar_jacobian_example() {
        let spec = experiments::scalar_quadratic();
        let j = jacobians(&spec, &v(&[1.0, 0.0]), 0.5).unwrap();
        assert_eq!(j.a.row(0).iter().copied().collect::<Vec<_>>(), [0.0, -0.5]);
        assert_eq!(j.a.row(1).iter().copied().collect::<Vec<_>>(), [0.0, 1.0]);
        assert_eq!(j.b[(0, 0)], -2.0);
        assert_eq!(j.b[(1, 0)], 0.0);
    }

    #[test]
    fn zero_step_jacobian_is_projector() {
        let lqr = experiments::lqr_double_integrator();
        let p = lqr.constraint.linear_projector(lqr.n()).unwrap();
        let zeta = lqr.state(&lqr.xi0, &v(&[1.0]));
        let j = jacobians(&lqr, &zeta, 0.0).unwrap();
        let n = lqr.n();
        assert!((j.a.view((0, 0), (n, n)) - &p).amax() < 1e-15);
        assert_eq!(j.a.view((0, n), (n, 1)).amax(), 0.0);
    }

    #[test]
    fn lqr_state_jacobian_is_independent_of_nominal() {
        let lqr = experiments::lqr_double_integrator();
        let n = lqr.n();
        let z1 = lqr.state(&lqr.xi0, &v(&[1.0]));
        let z2 = lqr.state(&lqr.xi0.map(|x| 3.0 * x - 1.0), &v(&[1.0]));
        let a1 = jacobians(&lqr, &z1, 10.0).unwrap().a;
        let a2 = jacobians(&lqr, &z2, 10.0).unwrap().a;
        assert_eq!(a1.view((0, 0), (n, n)), a2.view((0, 0), (n, n)));
    }

    #[test]
    fn box_constraints_are_rejected() {
        let spec = experiments::constrained_quadratic(0.0);
        assert!(matches!(
            jacobians(&spec, &v(&[0.5, 0.0]), 9.55),
            Err(Error::NonSmoothConstraint)
        ));
        assert!(curvature_bounds(&spec, &InputBox::from_spec(&spec)).is_err());
    }

    #[test]
    fn residual_examples() {
        let spec = experiments::scalar_quadratic();
        let nominal = v(&[1.0, 0.0]);
        let r = linearization_residual(&spec, &nominal, 0.5, &nominal, 0.5).unwrap();
        assert_eq!(r, v(&[0.0, 0.0]));
        let r = linearization_residual(&spec, &v(&[1.1, 0.0]), 0.6, &nominal, 0.5).unwrap();
        assert_relative_eq!(r[0], -0.02, epsilon = 1e-12);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn scalar_curvature_values() {
        let spec = experiments::scalar_quadratic();
        let bx = InputBox::from_spec(&spec);
        let mu = curvature_bounds(&spec, &bx).unwrap().mu;
        assert_relative_eq!(mu[0], 6.0, max_relative = 1e-10);
        assert_eq!(mu[1], 0.0);
        let mu = state_curvature_bounds(&spec, &bx).unwrap().mu;
        assert_eq!(mu[0], 0.0);
        let h = hessian_enclosure(&spec, 0, &bx).unwrap();
        assert_relative_eq!(h.abs_sum(), 6.0, max_relative = 1e-10);
    }

    #[test]
    fn lqr_hessian_samples_inside_enclosure() {
        let lqr = experiments::lqr_double_integrator();
        let bx = InputBox::from_spec(&lqr);
        let (n, d) = (lqr.n(), lqr.d());
        let p = lqr.constraint.linear_projector(n).unwrap();
        let mu = curvature_bounds(&lqr, &bx).unwrap().mu;
        assert!(mu.iter().all(|x| x.is_finite()));
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let encl: Vec<IntervalMatrix> = (0..n)
            .map(|i| hessian_enclosure(&lqr, i, &bx).unwrap())
            .collect();
        for _ in 0..200 {
            let (z, alpha) = sample(&mut rng, &bx);
            let (xi, theta) = lqr.split_state(&z).unwrap();
            let ph = &p * lqr.objective.hessian(&theta).unwrap();
            let phj = &p * &lqr.objective.h_params()[0];
            let cross = &phj * &xi + &p * &lqr.objective.g_params()[0];
            for i in 0..n {
                let mut h = DMatrix::zeros(n + d + 1, n + d + 1);
                for a in 0..n {
                    h[(a, n)] = -alpha * phj[(i, a)];
                    h[(n, a)] = h[(a, n)];
                    h[(a, n + 1)] = -ph[(i, a)];
                    h[(n + 1, a)] = h[(a, n + 1)];
                }
                h[(n, n + 1)] = -cross[i];
                h[(n + 1, n)] = -cross[i];
                assert!(encl[i].contains_point(&h));
                assert!(h.abs().sum() <= mu[i]);
            }
        }
    }

    fn fd_check(spec: &ProblemSpec, seed: u64) {
        let bx = InputBox::from_spec(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = spec.n() + spec.d();
        for _ in 0..100 {
            let (z, alpha) = sample(&mut rng, &bx);
            let jac = jacobians(spec, &z, alpha).unwrap();
            let h = 1e-5;
            for c in 0..=m {
                let (fp, fm) = if c < m {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[c] += h;
                    zm[c] -= h;
                    (
                        spec.augmented(&zp, alpha).unwrap(),
                        spec.augmented(&zm, alpha).unwrap(),
                    )
                } else {
                    (
                        spec.augmented(&z, alpha + h).unwrap(),
                        spec.augmented(&z, alpha - h).unwrap(),
                    )
                };
                let fd = (fp - fm) / (2.0 * h);
                let exact = if c < m {
                    jac.a.column(c).into_owned()
                } else {
                    jac.b.column(0).into_owned()
                };
                let scale = exact.amax().max(1.0);
                assert!((fd - &exact).amax() <= 1e-6 * scale, "column {c}");
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        fd_check(&experiments::scalar_quadratic(), 1);
        fd_check(&experiments::lqr_double_integrator(), 2);
    }

    #[test]
    fn residual_and_gradient_lipschitz_bounds() {
        for (spec, seed) in [
            (experiments::scalar_quadratic(), 3u64),
            (experiments::lqr_double_integrator(), 4),
        ] {
            let bx = InputBox::from_spec(&spec);
            let mu = curvature_bounds(&spec, &bx).unwrap().mu;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trials = if spec.n() > 1 { 300 } else { 10_000 };
            for _ in 0..trials {
                let (z1, a1) = sample(&mut rng, &bx);
                let (z2, a2) = sample(&mut rng, &bx);
                let dinf = (&z1 - &z2).amax().max(libm::fabs(a1 - a2));
                let r = linearization_residual(&spec, &z1, a1, &z2, a2).unwrap();
                let j1 = jacobians(&spec, &z1, a1).unwrap();
                let j2 = jacobians(&spec, &z2, a2).unwrap();
                for i in 0..spec.n() + spec.d() {
                    assert!(libm::fabs(r[i]) <= mu[i] * dinf * dinf + 1e-9);
                    let g1 = (j1.a.row(i) - j2.a.row(i)).abs().sum()
                        + libm::fabs(j1.b[(i, 0)] - j2.b[(i, 0)]);
                    assert!(g1 <= mu[i] * dinf + 1e-9);
                }
            }
        }
    }

    #[test]
    fn state_curvature_bounds_residual_with_frozen_step() {
        let spec = experiments::lqr_double_integrator();
        let bx = InputBox::from_spec(&spec);
        let mu = state_curvature_bounds(&spec, &bx).unwrap().mu;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let (z1, a) = sample(&mut rng, &bx);
            let (z2, _) = sample(&mut rng, &bx);
            let dinf = (&z1 - &z2).amax();
            let r = linearization_residual(&spec, &z1, a, &z2, a).unwrap();
            for i in 0..r.len() {
                assert!(libm::fabs(r[i]) <= mu[i] * dinf * dinf + 1e-9);
            }
        }
    }

    #[test]
    fn shrinking_box_never_increases_mu() {
        for spec in [
            experiments::scalar_quadratic(),
            experiments::lqr_double_integrator(),
        ] {
            let bx = InputBox::from_spec(&spec);
            let small = InputBox {
                xi: bx
                    .xi
                    .iter()
                    .map(|x| Interval::new(x.lo() * 0.5, x.hi() * 0.25).unwrap())
                    .collect(),
                theta: bx
                    .theta
                    .iter()
                    .map(|t| Interval::new(t.midpoint(), t.hi()).unwrap())
                    .collect(),
                alpha: Interval::new(bx.alpha.lo(), bx.alpha.midpoint()).unwrap(),
            };
            let big = curvature_bounds(&spec, &bx).unwrap().mu;
            let little = curvature_bounds(&spec, &small).unwrap().mu;
            assert!(big.iter().zip(little.iter()).all(|(b, l)| l <= b));
        }
    }
}
