//! Ground truth used to test certificates: exact minimizers, sampled hulls,
//! containment checks and the implicit-function sensitivity baseline.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::convergence::OuterApprox;
use crate::error::{Error, Result};
use crate::problem::{eigen_extremes, ConstraintSet, ParamBox, ProblemSpec};

/// Stopping tolerance of the iterative fallback.
pub const ITERATIVE_TOL: f64 = 1e-10;
const ITERATIVE_MAX_STEPS: usize = 1_000_000;

/// `ξ*(θ)` and whether it came from iterating PGD rather than a direct solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMinimizer {
    pub xi: DVector<f64>,
    pub iterative: bool,
}

/// Unique minimizer of `J(·, θ)` over the constraint set.
pub fn exact_minimizer(spec: &ProblemSpec, theta: &DVector<f64>) -> Result<ExactMinimizer> {
    let h = spec.objective.hessian(theta)?;
    let g = spec.objective.linear_term(theta)?;
    let n = spec.n();
    match &spec.constraint {
        ConstraintSet::Free => {
            let xi = h.cholesky().ok_or(Error::Singular("Hessian"))?.solve(&(-g));
            Ok(ExactMinimizer {
                xi,
                iterative: false,
            })
        }
        ConstraintSet::Affine(a) => {
            let m = a.matrix();
            let p = m.nrows();
            let mut kkt = DMatrix::zeros(n + p, n + p);
            kkt.view_mut((0, 0), (n, n)).copy_from(&h);
            kkt.view_mut((0, n), (n, p)).copy_from(&m.transpose());
            kkt.view_mut((n, 0), (p, n)).copy_from(m);
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-g));
            rhs.rows_mut(n, p).copy_from(a.rhs());
            let sol = kkt.lu().solve(&rhs).ok_or(Error::Singular("KKT system"))?;
            Ok(ExactMinimizer {
                xi: sol.rows(0, n).into_owned(),
                iterative: false,
            })
        }
        ConstraintSet::Box(b) if n == 1 => {
            let free = -g[0] / h[(0, 0)];
            let xi = DVector::from_element(1, free.clamp(b.lo()[0], b.hi()[0]));
            Ok(ExactMinimizer {
                xi,
                iterative: false,
            })
        }
        ConstraintSet::Box(_) => {
            let (_, l) = eigen_extremes(&h);
            let alpha = 1.0 / l;
            let mut x = spec.constraint.project(&spec.xi0);
            for _ in 0..ITERATIVE_MAX_STEPS {
                let next = spec.pgd_map(&x, theta, alpha)?;
                let diff = (&next - &x).amax();
                x = next;
                if diff <= ITERATIVE_TOL {
                    return Ok(ExactMinimizer {
                        xi: x,
                        iterative: true,
                    });
                }
            }
            Err(Error::Infeasible(
                "iterative minimizer did not converge".into(),
            ))
        }
    }
}

/// `‖ξ − proj(ξ − ∇J(ξ, θ)/L)‖∞`, zero exactly at the minimizer.
pub fn stationarity_residual(
    spec: &ProblemSpec,
    theta: &DVector<f64>,
    xi: &DVector<f64>,
) -> Result<f64> {
    let (_, l) = spec.convexity_bounds()?;
    let next = spec.pgd_map(xi, theta, 1.0 / l)?;
    Ok((xi - next).amax())
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Largest parameter dimension for which a tensor grid is used.
pub const DENSE_GRID_MAX_DIM: usize = 3;

/// Tensor grid with `points` per axis for `d ≤ 3`, seeded Latin hypercube
/// with `points` samples otherwise. One point yields the centre.
pub fn theta_grid(theta_box: &ParamBox, points: usize, seed: u64) -> Vec<DVector<f64>> {
    let d = theta_box.dim();
    let (lo, hi) = (theta_box.lower(), theta_box.upper());
    if points <= 1 {
        return alloc::vec![theta_box.chebyshev_center()];
    }
    if d <= DENSE_GRID_MAX_DIM {
        let axes: Vec<Vec<f64>> = (0..d).map(|i| linspace(lo[i], hi[i], points)).collect();
        let total = points.pow(d as u32);
        return (0..total)
            .map(|mut idx| {
                DVector::from_fn(d, |i, _| {
                    let v = axes[i][idx % points];
                    idx /= points;
                    v
                })
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut perm: Vec<usize> = (0..points).collect();
        for i in (1..points).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        strata.push(perm);
    }
    (0..points)
        .map(|s| {
            DVector::from_fn(d, |i, _| {
                let u = (strata[i][s] as f64 + unit(&mut rng)) / points as f64;
                lo[i] + (hi[i] - lo[i]) * u
            })
        })
        .collect()
}

/// Vertices of Θ followed by `count` seeded uniform samples.
pub fn theta_uniform(theta_box: &ParamBox, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (theta_box.lower(), theta_box.upper());
    let mut out = theta_box.vertices();
    out.extend((0..count).map(|_| {
        DVector::from_fn(theta_box.dim(), |i, _| {
            lo[i] + (hi[i] - lo[i]) * unit(&mut rng)
        })
    }));
    out
}

/// Per-coordinate min/max of `ξ*(θ)` over a parameter sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerHull {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub grid_points: usize,
    pub samples: usize,
    pub iterative: bool,
}

pub fn minimizer_hull(spec: &ProblemSpec, grid_points: usize, seed: u64) -> Result<MinimizerHull> {
    let thetas = theta_grid(&spec.theta_box, grid_points, seed);
    let mut lo = DVector::from_element(spec.n(), f64::INFINITY);
    let mut hi = DVector::from_element(spec.n(), f64::NEG_INFINITY);
    let mut iterative = false;
    for t in &thetas {
        let m = exact_minimizer(spec, t)?;
        iterative |= m.iterative;
        lo = lo.inf(&m.xi);
        hi = hi.sup(&m.xi);
    }
    Ok(MinimizerHull {
        lo,
        hi,
        grid_points,
        samples: thetas.len(),
        iterative,
    })
}

/// A sequence of coordinate boxes, one per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSequence {
    pub lo: Vec<DVector<f64>>,
    pub hi: Vec<DVector<f64>>,
}

impl BoxSequence {
    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    /// Reach boxes of an outer approximation.
    pub fn reach(outer: &OuterApprox) -> Self {
        Self {
            lo: outer.reach_lo.clone(),
            hi: outer.reach_hi.clone(),
        }
    }

    /// The inflated box at the final iterate only.
    pub fn inflated_final(outer: &OuterApprox) -> Self {
        let n = outer.horizon();
        Self {
            lo: alloc::vec![outer.inflated_lo[n].clone()],
            hi: alloc::vec![outer.inflated_hi[n].clone()],
        }
    }

    pub fn from_hull(h: &MinimizerHull) -> Self {
        Self {
            lo: alloc::vec![h.lo.clone()],
            hi: alloc::vec![h.hi.clone()],
        }
    }
}

/// Per-iteration hulls of trajectories produced by `rollout` for each `θ`.
pub fn rollout_hull<F>(thetas: &[DVector<f64>], mut rollout: F) -> Result<BoxSequence>
where
    F: FnMut(&DVector<f64>) -> Result<Vec<DVector<f64>>>,
{
    let mut out: Option<BoxSequence> = None;
    for t in thetas {
        let traj = rollout(t)?;
        match &mut out {
            None => {
                out = Some(BoxSequence {
                    lo: traj.clone(),
                    hi: traj,
                })
            }
            Some(b) => {
                if b.lo.len() != traj.len() {
                    return Err(Error::LengthMismatch {
                        context: "rollout length",
                        left: b.lo.len(),
                        right: traj.len(),
                    });
                }
                for (k, x) in traj.iter().enumerate() {
                    b.lo[k] = b.lo[k].inf(x);
                    b.hi[k] = b.hi[k].sup(x);
                }
            }
        }
    }
    out.ok_or_else(|| Error::InvalidInput("no parameter samples".into()))
}

/// Hulls of open-loop PGD rollouts with a fixed steplength schedule.
pub fn mc_rollout_hull(
    spec: &ProblemSpec,
    thetas: &[DVector<f64>],
    alphas: &[f64],
) -> Result<BoxSequence> {
    if let Some(&a) = alphas.iter().find(|a| !spec.steps.contains(**a)) {
        return Err(Error::SteplengthOutOfRange {
            alpha: a,
            lower: spec.steps.lower(),
            upper: spec.steps.upper(),
        });
    }
    rollout_hull(thetas, |t| spec.rollout(t, alphas))
}

/// Worst slack of an inner box sequence against an outer one.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    /// Minimum over coordinates of `min(inner_lo − outer_lo, outer_hi − inner_hi)` per iteration.
    pub slack_per_step: Vec<f64>,
    pub worst_slack: f64,
    pub worst_step: usize,
    pub worst_coord: usize,
    pub pass: bool,
}

pub fn containment_check(outer: &BoxSequence, inner: &BoxSequence) -> Result<ContainmentReport> {
    if outer.len() != inner.len() {
        return Err(Error::LengthMismatch {
            context: "containment steps",
            left: outer.len(),
            right: inner.len(),
        });
    }
    let mut slack_per_step = Vec::with_capacity(outer.len());
    let (mut worst, mut wk, mut wc) = (f64::INFINITY, 0, 0);
    for k in 0..outer.len() {
        let n = outer.lo[k].len();
        if inner.lo[k].len() != n {
            return Err(Error::DimensionMismatch {
                context: "containment coordinates",
                expected: n,
                found: inner.lo[k].len(),
            });
        }
        let mut step_worst = f64::INFINITY;
        for i in 0..n {
            let s = (inner.lo[k][i] - outer.lo[k][i]).min(outer.hi[k][i] - inner.hi[k][i]);
            if s < step_worst {
                step_worst = s;
            }
            if s < worst {
                worst = s;
                wk = k;
                wc = i;
            }
        }
        slack_per_step.push(step_worst);
    }
    Ok(ContainmentReport {
        slack_per_step,
        worst_slack: worst,
        worst_step: wk,
        worst_coord: wc,
        pass: worst >= 0.0,
    })
}

/// Sensitivity bound from the implicit function theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub lipschitz_bound: f64,
    /// Equal to `lipschitz_bound`: the bound already includes `diam(Θ)`.
    pub induced_width: f64,
}

impl BaselineReport {
    /// How many times wider the baseline is than a certified width.
    pub fn comparison_ratio(&self, certified_width: f64) -> f64 {
        self.induced_width / certified_width
    }
}

/// `max_θ ‖H(θ)⁻¹‖₂ · ‖H₁‖₂ · diam(Θ) · ‖ξ̄‖₂` for an affine-constrained
/// quadratic with a single parameter scaling `H₁`, where `ξ̄` collects the
/// largest magnitudes of the iterate box.
pub fn ift_baseline(spec: &ProblemSpec) -> Result<BaselineReport> {
    if !matches!(spec.constraint, ConstraintSet::Affine(_)) {
        return Err(Error::Unsupported("baseline needs an affine constraint"));
    }
    if spec.d() != 1 {
        return Err(Error::Unsupported(
            "baseline needs a single scalar parameter",
        ));
    }
    let hr = &spec.objective.h_params()[0];
    let (_, hr_norm) = eigen_extremes(hr);
    let mut inv_norm: f64 = 0.0;
    for v in spec.theta_box.vertices() {
        let (lmin, _) = eigen_extremes(&spec.objective.hessian(&v)?);
        if !(lmin > 0.0) {
            return Err(Error::Singular("Hessian"));
        }
        inv_norm = inv_norm.max(1.0 / lmin);
    }
    let xi_bar = DVector::from_fn(spec.n(), |i, _| {
        spec.iterate_lower[i].abs().max(spec.iterate_upper[i].abs())
    });
    let bound = inv_norm * hr_norm * spec.theta_box.diameter() * xi_bar.norm();
    Ok(BaselineReport {
        lipschitz_bound: bound,
        induced_width: bound,
    })
}
