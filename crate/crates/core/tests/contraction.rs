use approx::assert_relative_eq;
use minset_core::convergence::{
    contraction_rate, inflation_radii, initial_distance_bound, step_rate,
};
use minset_core::{experiments, DVector, Error, SteplengthInterval};
use proptest::prelude::*;

#[test]
fn scalar_rate_is_one_fifth() {
    let s = SteplengthInterval::new(0.4, 0.6).unwrap();
    assert_relative_eq!(
        contraction_rate(2.0, 2.0, &s).unwrap(),
        0.2,
        epsilon = 1e-15
    );
}

#[test]
fn lqr_rate_rounds_to_0_111() {
    let s = SteplengthInterval::new(9.9, 10.1).unwrap();
    let g = contraction_rate(0.09, 0.11, &s).unwrap();
    assert_eq!((g * 1000.0).round() / 1000.0, 0.111);
    assert_relative_eq!(g, 0.111, epsilon = 1e-12);
}

#[test]
fn builtin_bounds_drive_the_rates() {
    let lqr = experiments::lqr_double_integrator();
    let (m, l) = lqr.convexity_bounds().unwrap();
    assert_relative_eq!(m, 0.09, epsilon = 1e-9);
    assert_relative_eq!(l, 0.11, epsilon = 1e-9);
    let c = experiments::constrained_quadratic(0.0);
    let (m, l) = c.convexity_bounds().unwrap();
    let g = contraction_rate(m, l, &c.steps).unwrap();
    assert!(g < 0.01, "gamma = {g}");
}

#[test]
fn rate_at_or_above_one_is_rejected() {
    let s = SteplengthInterval::new(0.4, 1.2).unwrap();
    assert!(matches!(
        contraction_rate(2.0, 2.0, &s),
        Err(Error::ContractionNotBelowOne { .. })
    ));
}

#[test]
fn inflation_radii_decay_geometrically() {
    let beta = inflation_radii(0.2, 20.0, 20);
    assert_eq!(beta.len(), 21);
    assert_eq!(beta[0], 20.0);
    assert_relative_eq!(beta[20], 0.2f64.powi(20) * 20.0, max_relative = 1e-12);
}

#[test]
fn initial_bound_scales_with_box() {
    let lo = DVector::from_element(1, -10.0);
    let hi = DVector::from_element(1, 10.0);
    let r0 = initial_distance_bound(&lo, &hi, 0.2, 20).unwrap();
    assert_relative_eq!(r0, 20.0 / (1.0 - 0.2f64.powi(20)), max_relative = 1e-15);
}

proptest! {
    #[test]
    fn rate_dominates_every_interior_step(
        m in 0.1f64..5.0,
        ratio in 1.0f64..3.0,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let l = m * ratio;
        let upper = 2.0 / l * 0.999;
        let (lo, hi) = (upper * a.min(b) + 1e-6, upper * a.max(b) + 2e-6);
        let s = SteplengthInterval::new(lo, hi.min(upper)).unwrap();
        if let Ok(g) = contraction_rate(m, l, &s) {
            let alpha = s.lower() + t * (s.upper() - s.lower());
            prop_assert!(step_rate(m, l, alpha) <= g + 1e-15);
            prop_assert!(g < 1.0);
        }
    }
}
