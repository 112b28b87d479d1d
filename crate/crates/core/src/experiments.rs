//! Builtin problem instances: a scalar quadratic, a batch LQR planner over a
//! double integrator, and a scalar quadratic with a lower bound.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::problem::{
    AffineSubspace, BoxBounds, ConstraintSet, ParamBox, ParametricQuadratic, ProblemSpec,
    SteplengthInterval,
};

/// `ξ² + θξ` over `ξ ∈ ℝ`, `θ ∈ [−0.1, 0.1]`.
pub fn scalar_quadratic() -> ProblemSpec {
    let objective = ParametricQuadratic::new(
        DMatrix::from_element(1, 1, 2.0),
        vec![DMatrix::zeros(1, 1)],
        DVector::zeros(1),
        vec![DVector::from_element(1, 1.0)],
    )
    .expect("static data");
    ProblemSpec::new(
        objective,
        ConstraintSet::Free,
        ParamBox::scalar(-0.1, 0.1).expect("static data"),
        DVector::from_element(1, 1.0),
        SteplengthInterval::new(0.4, 0.6).expect("static data"),
        20,
        DVector::from_element(1, -10.0),
        DVector::from_element(1, 10.0),
    )
    .expect("static data")
}

/// Planning horizon `T` of the LQR instance.
pub const LQR_STEPS: usize = 10;
const LQR_NX: usize = 4;
const LQR_NU: usize = 2;
/// Initial condition `x̄₀` pinned by the equality constraints.
pub const LQR_X0: [f64; 4] = [1.0, 0.0, -1.0, 0.0];

/// Offset of `x_t` inside `ξ = (x₀, u₀, …, x_{T−1}, u_{T−1}, x_T)`.
pub fn lqr_state_index(t: usize) -> usize {
    (LQR_NX + LQR_NU) * t
}

/// Offset of `u_t` inside `ξ`.
pub fn lqr_input_index(t: usize) -> usize {
    (LQR_NX + LQR_NU) * t + LQR_NX
}

/// Coordinates of the two positions at planner step `t`.
pub fn lqr_position_coords(t: usize) -> [usize; 2] {
    let s = lqr_state_index(t);
    [s, s + 2]
}

fn lqr_dynamics() -> (DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        1.0, 1.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 1.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0, 0.0,
        1.0, 0.0,
        0.0, 0.0,
        0.0, 1.0,
    ]);
    (a, b)
}

/// Batch LQR over a planar double integrator with `T = 10`: `n = 64`,
/// `H(θ) = H_Q + θH_R`, `θ ∈ [0.9, 1.1]`, steplengths `[9.9, 10.1]`, `N = 10`.
pub fn lqr_double_integrator() -> ProblemSpec {
    let t_steps = LQR_STEPS;
    let n = lqr_state_index(t_steps) + LQR_NX;
    let (a, b) = lqr_dynamics();

    let mut hq = DMatrix::zeros(n, n);
    let mut hr = DMatrix::zeros(n, n);
    for t in 0..=t_steps {
        let s = lqr_state_index(t);
        for i in 0..LQR_NX {
            hq[(s + i, s + i)] = 0.1;
        }
        if t < t_steps {
            let u = lqr_input_index(t);
            for i in 0..LQR_NU {
                hr[(u + i, u + i)] = 0.1;
            }
        }
    }

    let rows = LQR_NX * (t_steps + 1);
    let mut m = DMatrix::zeros(rows, n);
    let mut rhs = DVector::zeros(rows);
    for i in 0..LQR_NX {
        m[(i, i)] = 1.0;
        rhs[i] = LQR_X0[i];
    }
    for t in 0..t_steps {
        let r = LQR_NX * (t + 1);
        let (xs, us, xn) = (
            lqr_state_index(t),
            lqr_input_index(t),
            lqr_state_index(t + 1),
        );
        for i in 0..LQR_NX {
            m[(r + i, xn + i)] = 1.0;
            for j in 0..LQR_NX {
                m[(r + i, xs + j)] -= a[(i, j)];
            }
            for j in 0..LQR_NU {
                m[(r + i, us + j)] -= b[(i, j)];
            }
        }
    }
    let affine = AffineSubspace::new(m, rhs).expect("dynamics constraints have full row rank");
    let xi0 = affine.offset().clone();

    let objective =
        ParametricQuadratic::new(hq, vec![hr], DVector::zeros(n), vec![DVector::zeros(n)])
            .expect("static data");
    ProblemSpec::new(
        objective,
        ConstraintSet::Affine(affine),
        ParamBox::scalar(0.9, 1.1).expect("static data"),
        xi0,
        SteplengthInterval::new(9.9, 10.1).expect("static data"),
        10,
        DVector::from_element(n, -20.0),
        DVector::from_element(n, 20.0),
    )
    .expect("static data")
}

/// Coefficients `(c₁, c₂)` of the constrained scalar instance.
pub const CONSTRAINED_C1: f64 = 0.0521;
pub const CONSTRAINED_C2: f64 = 0.0054;

/// `c₁ξ² + c₂θξ` subject to `ξ ≥ c₃`, `θ ∈ [−0.1, 0.1]`, steplengths
/// `[9.54, 9.56]`, `ξ₀ = 0.5`, `N = 10`, iterate box `[−10, 10]`.
pub fn constrained_quadratic(c3: f64) -> ProblemSpec {
    let objective = ParametricQuadratic::new(
        DMatrix::from_element(1, 1, 2.0 * CONSTRAINED_C1),
        vec![DMatrix::zeros(1, 1)],
        DVector::zeros(1),
        vec![DVector::from_element(1, CONSTRAINED_C2)],
    )
    .expect("static data");
    let bounds = BoxBounds::new(
        DVector::from_element(1, c3),
        DVector::from_element(1, f64::INFINITY),
    )
    .expect("finite lower bound");
    ProblemSpec::new(
        objective,
        ConstraintSet::Box(bounds),
        ParamBox::scalar(-0.1, 0.1).expect("static data"),
        DVector::from_element(1, 0.5),
        SteplengthInterval::new(9.54, 9.56).expect("static data"),
        10,
        DVector::from_element(1, -10.0),
        DVector::from_element(1, 10.0),
    )
    .expect("static data")
}

/// Closed-form minimizer set endpoints `{max(c₃, −c₂θ/(2c₁)) : θ ∈ Θ}`.
pub fn constrained_minimizer_range(c3: f64, theta_lo: f64, theta_hi: f64) -> (f64, f64) {
    let f = |t: f64| libm::fmax(c3, -CONSTRAINED_C2 * t / (2.0 * CONSTRAINED_C1));
    let (a, b) = (f(theta_lo), f(theta_hi));
    (a.min(b), a.max(b))
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 3] = [
    "scalar_quadratic",
    "lqr_double_integrator",
    "constrained_quadratic",
];

/// Looks up a builtin by name. `c3` only affects the constrained instance.
pub fn builtin(name: &str, c3: f64) -> Option<ProblemSpec> {
    match name {
        "scalar_quadratic" => Some(scalar_quadratic()),
        "lqr_double_integrator" => Some(lqr_double_integrator()),
        "constrained_quadratic" => Some(constrained_quadratic(c3)),
        _ => None,
    }
}

/// Builtin names as owned strings, for diagnostics.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN_NAMES.to_vec()
}
