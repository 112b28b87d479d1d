//! PGD contraction rate, inflation radii and the final outer approximation.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::SteplengthInterval;

/// `max{|1 − αm|, |1 − αL|}` for a single steplength.
pub fn step_rate(m: f64, l: f64, alpha: f64) -> f64 {
    libm::fmax(libm::fabs(1.0 - alpha * m), libm::fabs(1.0 - alpha * l))
}

/// Uniform contraction rate over the steplength interval.
///
/// The per-step rate is convex and piecewise linear in `α`, so its maximum
/// over the interval sits at an endpoint.
pub fn contraction_rate(m: f64, l: f64, steps: &SteplengthInterval) -> Result<f64> {
    if !(m > 0.0 && m <= l && l.is_finite()) {
        return Err(Error::InvalidInput(alloc::format!(
            "need 0 < m <= L, got m = {m}, L = {l}"
        )));
    }
    let gamma = libm::fmax(
        step_rate(m, l, steps.lower()),
        step_rate(m, l, steps.upper()),
    );
    if gamma >= 1.0 {
        return Err(Error::ContractionNotBelowOne { gamma });
    }
    Ok(gamma)
}

/// `R₀ = ‖ξ̄ − ξ̲‖₂ / (1 − γᴺ)`, a bound on the distance from any iterate in
/// the box to any minimizer.
pub fn initial_distance_bound(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    gamma: f64,
    horizon: usize,
) -> Result<f64> {
    if lower.len() != upper.len() {
        return Err(Error::LengthMismatch {
            context: "iterate box",
            left: lower.len(),
            right: upper.len(),
        });
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::ContractionNotBelowOne { gamma });
    }
    let denom = 1.0 - libm::pow(gamma, horizon as f64);
    Ok((upper - lower).norm() / denom)
}

/// `β_k = γᵏ R₀` for `k = 0..=N`.
pub fn inflation_radii(gamma: f64, r0: f64, horizon: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon + 1);
    let mut g = 1.0;
    for _ in 0..=horizon {
        out.push(g * r0);
        g *= gamma;
    }
    out
}

/// γ, R₀ and the inflation sequence bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCertificate {
    pub gamma: f64,
    pub r0: f64,
    pub beta: Vec<f64>,
}

impl ContractionCertificate {
    pub fn compute(
        m: f64,
        l: f64,
        steps: &SteplengthInterval,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let gamma = contraction_rate(m, l, steps)?;
        let r0 = initial_distance_bound(lower, upper, gamma, horizon)?;
        Ok(Self {
            gamma,
            r0,
            beta: inflation_radii(gamma, r0, horizon),
        })
    }
}

/// Per-iteration coordinate boxes: the certified reachable box and the same
/// box inflated by `β_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterApprox {
    pub reach_lo: Vec<DVector<f64>>,
    pub reach_hi: Vec<DVector<f64>>,
    pub inflated_lo: Vec<DVector<f64>>,
    pub inflated_hi: Vec<DVector<f64>>,
}

impl OuterApprox {
    pub fn horizon(&self) -> usize {
        self.reach_lo.len().saturating_sub(1)
    }

    /// Largest reach-box width over all coordinates at iteration `k`.
    pub fn max_width(&self, k: usize) -> f64 {
        (&self.reach_hi[k] - &self.reach_lo[k]).max()
    }
}

/// Builds reach boxes `ξ̂_k ± τ_k` and inflated boxes `ξ̂_k ± (τ_k + β_k)`.
pub fn assemble_outer_approx(
    nominal: &[DVector<f64>],
    tau: &[f64],
    beta: &[f64],
) -> Result<OuterApprox> {
    if nominal.len() != tau.len() {
        return Err(Error::LengthMismatch {
            context: "nominal vs tau",
            left: nominal.len(),
            right: tau.len(),
        });
    }
    if tau.len() != beta.len() {
        return Err(Error::LengthMismatch {
            context: "tau vs beta",
            left: tau.len(),
            right: beta.len(),
        });
    }
    let mut out = OuterApprox {
        reach_lo: Vec::with_capacity(tau.len()),
        reach_hi: Vec::with_capacity(tau.len()),
        inflated_lo: Vec::with_capacity(tau.len()),
        inflated_hi: Vec::with_capacity(tau.len()),
    };
    for ((x, &t), &b) in nominal.iter().zip(tau).zip(beta) {
        let lo = x.map(|v| v - t);
        let hi = x.map(|v| v + t);
        out.inflated_lo.push(lo.map(|v| v - b));
        out.inflated_hi.push(hi.map(|v| v + b));
        out.reach_lo.push(lo);
        out.reach_hi.push(hi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn steps(c: f64, cc: f64) -> SteplengthInterval {
        SteplengthInterval::new(c, cc).unwrap()
    }

    #[test]
    fn contraction_examples() {
        assert_relative_eq!(
            contraction_rate(2.0, 2.0, &steps(0.4, 0.6)).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        assert_eq!(contraction_rate(2.0, 2.0, &steps(0.5, 0.5)).unwrap(), 0.0);
        let g = contraction_rate(0.09, 0.11, &steps(9.9, 10.1)).unwrap();
        assert!((g - 0.111).abs() < 5e-4, "{g}");
    }

    #[test]
    fn wide_interval_fails() {
        let err = contraction_rate(2.0, 2.0, &steps(0.4, 1.0)).unwrap_err();
        assert_eq!(err.kind(), "infeasible");
        assert!(alloc::format!("{err}").contains("contraction_rate >= 1"));
    }

    #[test]
    fn distance_bound_examples() {
        let r = initial_distance_bound(
            &DVector::from_element(1, -10.0),
            &DVector::from_element(1, 10.0),
            0.2,
            20,
        )
        .unwrap();
        assert_relative_eq!(r, 20.0 / (1.0 - libm::pow(0.2, 20.0)), epsilon = 1e-15);
        let z = DVector::from_element(3, 1.5);
        assert_eq!(initial_distance_bound(&z, &z, 0.5, 4).unwrap(), 0.0);
        let r = initial_distance_bound(
            &DVector::from_element(64, -20.0),
            &DVector::from_element(64, 20.0),
            0.111,
            10,
        )
        .unwrap();
        assert!((r - 320.0).abs() < 1e-6);
        assert!(initial_distance_bound(&z, &z, 1.0, 4).is_err());
    }

    #[test]
    fn inflation_examples() {
        let b = inflation_radii(0.2, 20.0, 20);
        assert_eq!(b.len(), 21);
        assert_relative_eq!(b[20], libm::pow(0.2, 20.0) * 20.0, max_relative = 1e-12);
        assert!(b[20] < 2.2e-13 && b[20] > 2.0e-13);
        assert!(inflation_radii(0.3, 0.0, 5).iter().all(|&x| x == 0.0));
        let b = inflation_radii(0.111, 320.0, 10);
        assert!((b[10] - 9.1e-8).abs() < 0.1e-8, "{}", b[10]);
    }

    #[test]
    fn assembly_examples() {
        let nominal = vec![DVector::from_element(2, 1.0); 3];
        let o = assemble_outer_approx(&nominal, &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(o.reach_lo, nominal);
        assert_eq!(o.inflated_hi, nominal);
        assert!(assemble_outer_approx(&nominal, &[0.0; 2], &[0.0; 3]).is_err());
        assert!(assemble_outer_approx(&nominal, &[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn r0_ignores_initial_iterate() {
        // R₀ is a function of the box only, so perturbing ξ₀ inside the box leaves β unchanged.
        let spec = crate::experiments::scalar_quadratic();
        let (m, l) = spec.convexity_bounds().unwrap();
        let a = ContractionCertificate::compute(
            m,
            l,
            &spec.steps,
            &spec.iterate_lower,
            &spec.iterate_upper,
            20,
        )
        .unwrap();
        let mut moved = spec.clone();
        moved.xi0[0] = -3.7;
        let b = ContractionCertificate::compute(
            m,
            l,
            &moved.steps,
            &moved.iterate_lower,
            &moved.iterate_upper,
            20,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn endpoint_attains_maximum(m in 0.01f64..5.0, ratio in 1.0f64..10.0, lo_frac in 0.0f64..1.0, hi_frac in 0.0f64..1.0) {
            let l = m * ratio;
            let cap = 2.0 / l * 0.999;
            let c = cap * lo_frac.min(hi_frac).max(1e-3);
            let cc = cap * lo_frac.max(hi_frac).max(1e-3);
            let s = steps(c, cc);
            let gamma = contraction_rate(m, l, &s).unwrap();
            for i in 0..=200 {
                let a = c + (cc - c) * i as f64 / 200.0;
                prop_assert!(step_rate(m, l, a) <= gamma + 1e-12);
            }
        }

        #[test]
        fn inflation_gap_is_beta(t in proptest::collection::vec(0.0f64..2.0, 4), b in proptest::collection::vec(0.0f64..2.0, 4)) {
            let nominal = vec![DVector::from_vec(vec![0.3, -1.2]); 4];
            let o = assemble_outer_approx(&nominal, &t, &b).unwrap();
            for k in 0..4 {
                for i in 0..2 {
                    prop_assert!((o.inflated_hi[k][i] - o.reach_hi[k][i] - b[k]).abs() < 1e-12);
                    prop_assert!(o.inflated_lo[k][i] <= o.reach_lo[k][i]);
                }
            }
        }

        #[test]
        fn beta_strictly_decreasing(gamma in 0.01f64..0.99, r0 in 0.1f64..100.0) {
            let b = inflation_radii(gamma, r0, 10);
            for k in 0..10 {
                prop_assert!(b[k + 1] < b[k]);
            }
        }
    }
}
