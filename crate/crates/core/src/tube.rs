//! Tube radii around a nominal PGD rollout and the robust steplength margins.
//!
//! Deviations `(Δζ_k, Δα_k)` of every realizable trajectory are the image of
//! the initial error `Δζ₀` and of the linearization disturbances `d_j` under
//! the system response. With `‖Δζ₀‖∞ ≤ D` and a per-coordinate disturbance
//! bound `|d_{j,c}| ≤ s_c + e_c τ_{j−1} + μ_c τ²_{j−1}`, the radii satisfy
//!
//! ```text
//! τ_k ≥ ‖M_{k,0}‖∞ D + Σ_{j=1..k} max_r Σ_c |M_{k,j}|_{rc} (s_c + e_c τ_{j−1} + μ_c τ²_{j−1})
//! ```
//!
//! with `M_{k,j} = [(Φζd)_{k,j}; (Φαd)_{k,j}]`. The right-hand side at step
//! `k` only reads `τ_0..τ_{k−1}`, so a single ascending sweep produces the
//! least fixed point.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::convergence::{assemble_outer_approx, step_rate, ContractionCertificate, OuterApprox};
use crate::error::{Error, Result};
use crate::linearization::{
    curvature_bounds, jacobians, state_curvature_bounds, InputBox, JacobianPair,
};
use crate::problem::{ProblemSpec, SteplengthInterval};
use crate::sls::{
    build_stacked, inf_norm, response_from_gains, GainSchedule, StackedSystem, SystemResponse,
};
use crate::smoothing::{
    lipschitz_box, lipschitz_constant, smoothed_constants, state_lipschitz_constant, Smoother,
    SmoothingBall, SmoothingParams,
};

/// Relative outward rounding applied to every computed radius, so that the
/// fixed-point inequality survives re-evaluation in a different order.
pub const ROUNDING_MARGIN: f64 = 1e-12;

/// Convergence tolerance of the fixed-point sweeps (relative).
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// Candidate feedback gains searched by the certifier.
#[derive(Debug, Clone, PartialEq)]
pub enum GainFamily {
    /// Open loop: the steplength never leaves its nominal value.
    Zero,
    /// `K_{k,k} = κ (B_k^ξ)ᵀ` for each `κ` in the grid.
    ScalarProportional(Vec<f64>),
}

impl GainFamily {
    fn kappas(&self) -> Vec<f64> {
        match self {
            GainFamily::Zero => vec![0.0],
            GainFamily::ScalarProportional(k) => k.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub gain_family: GainFamily,
    /// Weight of the block-norm regularizer in the candidate cost.
    pub regularizer_weight: f64,
    pub max_iterations: usize,
    /// Radii above `divergence_factor · diam(Θ)` count as divergence.
    pub divergence_factor: f64,
    /// Bound `‖Δζ₀‖∞` by `diam(Θ)/2` instead of `diam(Θ)`. Sound because
    /// the nominal parameter is the centre of Θ.
    pub half_diameter: bool,
    /// Replaces the computed curvature of every ξ-output.
    pub mu_override: Option<f64>,
    /// Replaces the automatically chosen nominal steplength.
    pub nominal_step: Option<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            gain_family: GainFamily::Zero,
            regularizer_weight: 1e-3,
            max_iterations: 100,
            divergence_factor: 1e3,
            half_diameter: false,
            mu_override: None,
            nominal_step: None,
        }
    }
}

impl SynthesisOptions {
    pub fn validate(&self) -> Result<()> {
        if let GainFamily::ScalarProportional(k) = &self.gain_family {
            if k.is_empty() {
                return Err(Error::InvalidInput("gain grid must be nonempty".into()));
            }
            if k.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(
                    "gain grid entries must be finite".into(),
                ));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.regularizer_weight >= 0.0 && self.regularizer_weight.is_finite()) {
            return Err(Error::InvalidInput(
                "regularizer_weight must be finite and nonnegative".into(),
            ));
        }
        if !(self.divergence_factor > 0.0) {
            return Err(Error::InvalidInput(
                "divergence_factor must be positive".into(),
            ));
        }
        if let Some(mu) = self.mu_override {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::InvalidInput(
                    "mu_override must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-coordinate disturbance bound `s_c + e_{j,c} τ + μ_c τ²` for the
/// disturbance entering at step `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel {
    pub constant: DVector<f64>,
    /// One vector per disturbance step `j = 1..=N`.
    pub linear: Vec<DVector<f64>>,
    pub quadratic: DVector<f64>,
}

impl DisturbanceModel {
    /// Pure linearization error `μ_c τ²`.
    pub fn quadratic_only(mu: &DVector<f64>, horizon: usize) -> Self {
        let s = mu.len();
        Self {
            constant: DVector::zeros(s),
            linear: vec![DVector::zeros(s); horizon],
            quadratic: mu.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.quadratic.len()
    }
}

/// Weighted row sums of the response blocks: everything the recursion and
/// the margins need, independent of `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeCoefficients {
    /// `‖M_{k,0}‖∞`
    pub initial: Vec<f64>,
    /// `‖e_αᵀ M_{k,0}‖₁`
    pub initial_alpha: Vec<f64>,
    /// `terms[k][j − 1][r] = Σ_c |M_{k,j}|_{rc} (s_c, e_{j,c}, μ_c)` for rows
    /// `r` of `M_{k,j}`; the last row is the steplength.
    pub terms: Vec<Vec<Vec<[f64; 3]>>>,
}

impl TubeCoefficients {
    pub fn build(phi: &SystemResponse, model: &DisturbanceModel) -> Result<Self> {
        let nb = phi.nblocks();
        let s = phi.zeta_d.col_size();
        if model.dim() != s || model.constant.len() != s {
            return Err(Error::DimensionMismatch {
                context: "disturbance model",
                expected: s,
                found: model.dim(),
            });
        }
        if model.linear.len() + 1 < nb {
            return Err(Error::LengthMismatch {
                context: "disturbance model steps",
                left: model.linear.len(),
                right: nb - 1,
            });
        }
        let mut initial = Vec::with_capacity(nb);
        let mut initial_alpha = Vec::with_capacity(nb);
        let mut terms = Vec::with_capacity(nb);
        for k in 0..nb {
            let m0 = phi.disturbance_block(k, 0);
            initial.push(inf_norm(&m0));
            initial_alpha.push(m0.row(s).abs().sum());
            let mut row_k = Vec::with_capacity(k);
            for j in 1..=k {
                let m = phi.disturbance_block(k, j);
                let lin = &model.linear[j - 1];
                let rows = (0..m.nrows())
                    .map(|r| {
                        let mut acc = [0.0; 3];
                        for c in 0..s {
                            let a = m[(r, c)].abs();
                            acc[0] += a * model.constant[c];
                            acc[1] += a * lin[c];
                            acc[2] += a * model.quadratic[c];
                        }
                        acc
                    })
                    .collect();
                row_k.push(rows);
            }
            terms.push(row_k);
        }
        Ok(Self {
            initial,
            initial_alpha,
            terms,
        })
    }

    pub fn horizon(&self) -> usize {
        self.initial.len().saturating_sub(1)
    }

    /// Right-hand side of the recursion at step `k` given earlier radii.
    pub fn rhs(&self, k: usize, tau: &[f64], diam: f64) -> f64 {
        let mut acc = self.initial[k] * diam;
        for (j, rows) in self.terms[k].iter().enumerate() {
            let t = tau[j];
            acc += rows
                .iter()
                .map(|c| c[0] + c[1] * t + c[2] * t * t)
                .fold(0.0, f64::max);
        }
        acc
    }

    /// Contribution to the steplength deviation bound at step `k`.
    pub fn alpha_spread(&self, k: usize, tau: &[f64], diam: f64) -> f64 {
        let mut acc = self.initial_alpha[k] * diam;
        for (j, rows) in self.terms[k].iter().enumerate() {
            let t = tau[j];
            let c = rows.last().expect("steplength row");
            acc += c[0] + c[1] * t + c[2] * t * t;
        }
        acc
    }
}

/// Least fixed point of the tube recursion, rounded outward.
pub fn tau_fixed_point(
    coeffs: &TubeCoefficients,
    diam: f64,
    max_iterations: usize,
    threshold: f64,
) -> Result<Vec<f64>> {
    if max_iterations == 0 {
        return Err(Error::InvalidInput(
            "max_iterations must be at least 1".into(),
        ));
    }
    let nb = coeffs.initial.len();
    let mut tau = vec![0.0; nb];
    for _ in 0..max_iterations {
        let mut change: f64 = 0.0;
        for k in 0..nb {
            let next = coeffs.rhs(k, &tau, diam) * (1.0 + ROUNDING_MARGIN);
            if !(next <= threshold) {
                return Err(Error::Infeasible(alloc::format!(
                    "tube radius diverged at k = {k} (tau = {next:e}, threshold {threshold:e})"
                )));
            }
            change = change.max((next - tau[k]).abs() / next.abs().max(f64::MIN_POSITIVE));
            tau[k] = next;
        }
        if change <= FIXED_POINT_TOL {
            return Ok(tau);
        }
    }
    Err(Error::Infeasible(alloc::format!(
        "tube recursion did not converge in {max_iterations} sweeps"
    )))
}

/// `RHS_k(τ) − τ_k` for every `k`; nonpositive entries certify `τ`.
pub fn fixed_point_slack(coeffs: &TubeCoefficients, tau: &[f64], diam: f64) -> Vec<f64> {
    (0..coeffs.initial.len())
        .map(|k| coeffs.rhs(k, tau, diam) - tau[k])
        .collect()
}

/// Slacks of `α_k ≤ C_α` and `α_k ≥ c_α` for `k < N`, worst case over the
/// tube. Both rows share the same spread because `a₂ = −a₁`.
pub fn constraint_margins(
    coeffs: &TubeCoefficients,
    tau: &[f64],
    nominal_steps: &[f64],
    steps: &SteplengthInterval,
    diam: f64,
) -> Vec<[f64; 2]> {
    nominal_steps
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let spread = coeffs.alpha_spread(k, tau, diam);
            [a - steps.upper() + spread, steps.lower() - a + spread]
        })
        .collect()
}

/// Where a numeric constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantSource {
    Computed,
    Override,
    Config,
}

impl ConstantSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstantSource::Computed => "computed",
            ConstantSource::Override => "override",
            ConstantSource::Config => "config",
        }
    }
}

/// How the dynamics were linearized.
#[derive(Debug, Clone, PartialEq)]
pub enum CertificateMode {
    Smooth,
    Smoothed {
        delta: f64,
        ell: f64,
        /// `μ̃` on ξ-outputs.
        mu_tilde: f64,
        /// Largest Jacobian quadrature error over the horizon.
        eps_quad: f64,
        ball: SmoothingBall,
    },
}

impl CertificateMode {
    pub fn name(&self) -> &'static str {
        match self {
            CertificateMode::Smooth => "Smooth",
            CertificateMode::Smoothed { .. } => "Smoothed",
        }
    }
}

/// Outcome of one gain candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub kappa: f64,
    pub tau_final: Option<f64>,
    pub cost: Option<f64>,
    pub margins_ok: bool,
    pub failure: Option<String>,
}

/// Certified tube around a nominal rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeCertificate {
    pub theta_hat: DVector<f64>,
    pub nominal_states: Vec<DVector<f64>>,
    pub nominal_steps: Vec<f64>,
    pub gains: GainSchedule,
    pub response: SystemResponse,
    pub model: DisturbanceModel,
    pub coefficients: TubeCoefficients,
    /// Bound used for `‖Δζ₀‖∞`.
    pub diameter_bound: f64,
    pub tau: Vec<f64>,
    pub margins: Vec<[f64; 2]>,
    pub sound: bool,
    pub mode: CertificateMode,
    /// Quadratic disturbance coefficients actually used.
    pub mu: DVector<f64>,
    pub mu_source: ConstantSource,
    pub contraction: ContractionCertificate,
    pub outer: OuterApprox,
    pub selected_kappa: f64,
    pub candidates: Vec<CandidateReport>,
}

impl TubeCertificate {
    pub fn horizon(&self) -> usize {
        self.tau.len() - 1
    }

    /// Largest entry of `RHS(τ) − τ`.
    pub fn fixed_point_residual(&self) -> f64 {
        fixed_point_slack(&self.coefficients, &self.tau, self.diameter_bound)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_margin(&self) -> f64 {
        self.margins
            .iter()
            .flat_map(|m| m.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Widest coordinate of the inflated box at the final iterate.
    pub fn final_inflated_width(&self) -> f64 {
        let n = self.horizon();
        (&self.outer.inflated_hi[n] - &self.outer.inflated_lo[n]).max()
    }
}

struct Nominal {
    theta_hat: DVector<f64>,
    alpha_hat: f64,
    states: Vec<DVector<f64>>,
    contraction: ContractionCertificate,
    diam: f64,
    threshold: f64,
}

/// Steplength in `{c, (c + C)/2, C}` with the smallest contraction rate;
/// ties go to the earlier entry.
pub fn nominal_steplength(m: f64, l: f64, steps: &SteplengthInterval) -> f64 {
    let mut best = steps.lower();
    let mut best_rate = step_rate(m, l, best);
    for a in [steps.midpoint(), steps.upper()] {
        let r = step_rate(m, l, a);
        if r < best_rate {
            best = a;
            best_rate = r;
        }
    }
    best
}

fn nominal(spec: &ProblemSpec, options: &SynthesisOptions) -> Result<Nominal> {
    options.validate()?;
    let (m, l) = spec.convexity_bounds()?;
    let contraction = ContractionCertificate::compute(
        m,
        l,
        &spec.steps,
        &spec.iterate_lower,
        &spec.iterate_upper,
        spec.horizon,
    )?;
    let theta_hat = spec.theta_box.chebyshev_center();
    let alpha_hat = options
        .nominal_step
        .unwrap_or_else(|| nominal_steplength(m, l, &spec.steps));
    let mut states = Vec::with_capacity(spec.horizon + 1);
    states.push(spec.state(&spec.xi0, &theta_hat));
    for _ in 0..spec.horizon {
        let next = spec.augmented(states.last().unwrap(), alpha_hat)?;
        states.push(next);
    }
    let full = spec.theta_box.diameter();
    let diam = if options.half_diameter {
        full / 2.0
    } else {
        full
    };
    let threshold = options.divergence_factor * full.max(f64::MIN_POSITIVE);
    Ok(Nominal {
        theta_hat,
        alpha_hat,
        states,
        contraction,
        diam,
        threshold,
    })
}

struct Evaluated {
    kappa: f64,
    gains: GainSchedule,
    phi: SystemResponse,
    model: DisturbanceModel,
    mu: DVector<f64>,
    coeffs: TubeCoefficients,
    tau: Vec<f64>,
    margins: Vec<[f64; 2]>,
    cost: f64,
}

fn evaluate(
    spec: &ProblemSpec,
    nom: &Nominal,
    options: &SynthesisOptions,
    kappa: f64,
    sys: &StackedSystem,
    model: DisturbanceModel,
) -> Result<Evaluated> {
    let gains = GainSchedule::proportional(sys, kappa);
    let phi = response_from_gains(sys, &gains)?;
    let coeffs = TubeCoefficients::build(&phi, &model)?;
    let tau = tau_fixed_point(&coeffs, nom.diam, options.max_iterations, nom.threshold)?;
    let steps = vec![nom.alpha_hat; spec.horizon];
    let margins = constraint_margins(&coeffs, &tau, &steps, &spec.steps, nom.diam);
    let cost = tau[spec.horizon] + options.regularizer_weight * phi.regularizer();
    Ok(Evaluated {
        kappa,
        gains,
        phi,
        mu: model.quadratic.clone(),
        model,
        coeffs,
        tau,
        margins,
        cost,
    })
}

fn margins_ok(m: &[[f64; 2]]) -> bool {
    m.iter().all(|r| r[0] <= 0.0 && r[1] <= 0.0)
}

/// Picks the candidate with satisfied margins and the lowest cost; falls
/// back to the lowest cost overall when no candidate meets the margins.
fn select(results: Vec<(f64, Result<Evaluated>)>) -> Result<(Evaluated, Vec<CandidateReport>)> {
    let mut reports = Vec::with_capacity(results.len());
    let mut best: Option<Evaluated> = None;
    let mut last_err = None;
    for (kappa, r) in results {
        match r {
            Ok(e) => {
                let ok = margins_ok(&e.margins);
                reports.push(CandidateReport {
                    kappa,
                    tau_final: e.tau.last().copied(),
                    cost: Some(e.cost),
                    margins_ok: ok,
                    failure: None,
                });
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let bok = margins_ok(&b.margins);
                        (ok && !bok) || (ok == bok && e.cost < b.cost)
                    }
                };
                if better {
                    best = Some(e);
                }
            }
            Err(err) => {
                reports.push(CandidateReport {
                    kappa,
                    tau_final: None,
                    cost: None,
                    margins_ok: false,
                    failure: Some(alloc::format!("{err}")),
                });
                last_err = Some(err);
            }
        }
    }
    match best {
        Some(b) => Ok((b, reports)),
        None => Err(match last_err {
            Some(Error::Infeasible(msg)) => Error::Infeasible(msg),
            Some(e) => e,
            None => Error::Infeasible("no gain candidate".into()),
        }),
    }
}

fn check_iterate_box(spec: &ProblemSpec, states: &[DVector<f64>], tau: &[f64]) -> Result<()> {
    let n = spec.n();
    for (k, (z, &t)) in states.iter().zip(tau).enumerate() {
        for i in 0..n {
            if z[i] - t < spec.iterate_lower[i] || z[i] + t > spec.iterate_upper[i] {
                return Err(Error::TubeEscapesIterateBox { k, coord: i });
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &ProblemSpec,
    nom: Nominal,
    best: Evaluated,
    candidates: Vec<CandidateReport>,
    mode: CertificateMode,
    mu_source: ConstantSource,
) -> Result<TubeCertificate> {
    check_iterate_box(spec, &nom.states, &best.tau)?;
    let n = spec.n();
    let xi_nominal: Vec<DVector<f64>> = nom
        .states
        .iter()
        .map(|z| z.rows(0, n).into_owned())
        .collect();
    let outer = assemble_outer_approx(&xi_nominal, &best.tau, &nom.contraction.beta)?;
    let fixed_ok = fixed_point_slack(&best.coeffs, &best.tau, nom.diam)
        .iter()
        .all(|&s| s <= 0.0);
    let sound = fixed_ok && margins_ok(&best.margins);
    Ok(TubeCertificate {
        theta_hat: nom.theta_hat,
        nominal_steps: vec![nom.alpha_hat; spec.horizon],
        nominal_states: nom.states,
        gains: best.gains,
        response: best.phi,
        model: best.model,
        coefficients: best.coeffs,
        diameter_bound: nom.diam,
        tau: best.tau,
        margins: best.margins,
        sound,
        mode,
        mu: best.mu,
        mu_source,
        contraction: nom.contraction,
        outer,
        selected_kappa: best.kappa,
        candidates,
    })
}

fn override_mu(n: usize, d: usize, v: f64) -> DVector<f64> {
    DVector::from_fn(n + d, |i, _| if i < n { v } else { 0.0 })
}

/// Certifies a tube for a smooth (free or affine) constraint.
///
/// The open-loop candidate only needs the state–state curvature since its
/// steplength never deviates; feedback candidates use the full curvature.
pub fn certify(spec: &ProblemSpec, options: &SynthesisOptions) -> Result<TubeCertificate> {
    if !spec.constraint.is_smooth() {
        return Err(Error::NonSmoothConstraint);
    }
    let nom = nominal(spec, options)?;
    let (n, d) = (spec.n(), spec.d());
    let jac: Vec<JacobianPair> = nom.states[..spec.horizon]
        .iter()
        .map(|z| jacobians(spec, z, nom.alpha_hat))
        .collect::<Result<_>>()?;
    let sys = build_stacked(&jac, n, d)?;
    let bx = InputBox::from_spec(spec);

    let kappas = options.gain_family.kappas();
    let (mu_source, mu_open, mu_fb) = match options.mu_override {
        Some(v) => {
            let mu = override_mu(n, d, v);
            (ConstantSource::Override, Some(mu.clone()), Some(mu))
        }
        None => {
            let open = if kappas.contains(&0.0) {
                Some(state_curvature_bounds(spec, &bx)?.mu)
            } else {
                None
            };
            let fb = if kappas.iter().any(|&k| k != 0.0) {
                Some(curvature_bounds(spec, &bx)?.mu)
            } else {
                None
            };
            (ConstantSource::Computed, open, fb)
        }
    };

    let results = kappas
        .iter()
        .map(|&kappa| {
            let mu = if kappa == 0.0 {
                mu_open.as_ref()
            } else {
                mu_fb.as_ref()
            }
            .expect("curvature prepared");
            let model = DisturbanceModel::quadratic_only(mu, spec.horizon);
            (kappa, evaluate(spec, &nom, options, kappa, &sys, model))
        })
        .collect();
    let (best, reports) = select(results)?;
    finish(spec, nom, best, reports, CertificateMode::Smooth, mu_source)
}

/// Certifies a tube through the smoothed surrogate of the PGD map.
///
/// The nominal follows the true map. Jacobians come from the smoothed map,
/// and each disturbance is charged `2ℓδ` (smoothing error at both the true
/// and the nominal point), `ε·τ` (Jacobian quadrature error) and `μ̃τ²`.
/// The open-loop candidate smooths over `params.ball`; feedback candidates
/// always use the full input ball.
pub fn certify_smoothed(
    spec: &ProblemSpec,
    options: &SynthesisOptions,
    params: &SmoothingParams,
) -> Result<TubeCertificate> {
    let nom = nominal(spec, options)?;
    let (n, d) = (spec.n(), spec.d());
    let s = n + d;

    struct Prepared {
        sys: StackedSystem,
        eps: Vec<DVector<f64>>,
        ell: f64,
        mu_tilde: DVector<f64>,
        ball: SmoothingBall,
    }

    let prepare = |ball: SmoothingBall| -> Result<Prepared> {
        let mut p = params.clone();
        p.ball = ball;
        let smoother = Smoother::new(spec, &p)?;
        let mut jac = Vec::with_capacity(spec.horizon);
        let mut eps = Vec::with_capacity(spec.horizon);
        for z in &nom.states[..spec.horizon] {
            let sj = smoother.jacobians(z, nom.alpha_hat)?;
            jac.push(sj.pair);
            eps.push(sj.eps_rows);
        }
        let bx = lipschitz_box(spec, &p);
        let ell = match ball {
            SmoothingBall::State => state_lipschitz_constant(spec, &bx)?,
            SmoothingBall::Full => lipschitz_constant(spec, &bx)?,
        };
        let consts = smoothed_constants(ell, p.delta, smoother.ball_dim(), n, d)?;
        Ok(Prepared {
            sys: build_stacked(&jac, n, d)?,
            eps,
            ell,
            mu_tilde: consts.mu_tilde,
            ball,
        })
    };

    let kappas = options.gain_family.kappas();
    let open = if kappas.contains(&0.0) {
        Some(prepare(params.ball)?)
    } else {
        None
    };
    let fb = if kappas.iter().any(|&k| k != 0.0) {
        Some(prepare(SmoothingBall::Full)?)
    } else {
        None
    };

    let mu_source = if options.mu_override.is_some() {
        ConstantSource::Override
    } else {
        ConstantSource::Computed
    };
    let results = kappas
        .iter()
        .map(|&kappa| {
            let p = if kappa == 0.0 {
                open.as_ref()
            } else {
                fb.as_ref()
            }
            .expect("smoothing prepared");
            let quadratic = match options.mu_override {
                Some(v) => override_mu(n, d, v),
                None => p.mu_tilde.clone(),
            };
            let two_ell_delta = 2.0 * p.ell * params.delta;
            let model = DisturbanceModel {
                constant: DVector::from_fn(s, |i, _| if i < n { two_ell_delta } else { 0.0 }),
                linear: p.eps.clone(),
                quadratic,
            };
            (kappa, evaluate(spec, &nom, options, kappa, &p.sys, model))
        })
        .collect();
    let (best, reports) = select(results)?;
    let p = if best.kappa == 0.0 {
        open.as_ref()
    } else {
        fb.as_ref()
    }
    .expect("smoothing prepared");
    let mode = CertificateMode::Smoothed {
        delta: params.delta,
        ell: p.ell,
        mu_tilde: if n > 0 { p.mu_tilde[0] } else { 0.0 },
        eps_quad: p.eps.iter().map(|e| e.max()).fold(0.0, f64::max),
        ball: p.ball,
    };
    finish(spec, nom, best, reports, mode, mu_source)
}

/// Routes to [`certify`] or [`certify_smoothed`] by constraint type.
pub fn certify_auto(
    spec: &ProblemSpec,
    options: &SynthesisOptions,
    params: Option<&SmoothingParams>,
) -> Result<TubeCertificate> {
    match params {
        Some(p) => certify_smoothed(spec, options, p),
        None if spec.constraint.is_smooth() => certify(spec, options),
        None => certify_smoothed(
            spec,
            options,
            &SmoothingParams::default_with(SmoothingBall::State),
        ),
    }
}

/// A realized trajectory under the certified feedback law.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrajectory {
    pub states: Vec<DVector<f64>>,
    pub steps: Vec<f64>,
}

impl ClosedLoopTrajectory {
    /// `‖(Δζ_k, Δα_k)‖∞` against the certificate's nominal.
    pub fn deviation(&self, cert: &TubeCertificate, k: usize) -> f64 {
        let dz = (&self.states[k] - &cert.nominal_states[k]).amax();
        let da = if k < self.steps.len() {
            (self.steps[k] - cert.nominal_steps[k]).abs()
        } else {
            0.0
        };
        dz.max(da)
    }
}

/// Rolls out the true PGD map with `α_k = α̂_k + Σ_{j≤k} K_{k,j}(ξ_j − ξ̂_j)`.
pub fn closed_loop_rollout(
    spec: &ProblemSpec,
    cert: &TubeCertificate,
    theta: &DVector<f64>,
) -> Result<ClosedLoopTrajectory> {
    let n = spec.n();
    let horizon = cert.nominal_steps.len();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut steps = Vec::with_capacity(horizon);
    states.push(spec.state(&spec.xi0, theta));
    for k in 0..horizon {
        let mut alpha = cert.nominal_steps[k];
        if !cert.gains.is_zero() {
            for j in 0..=k {
                let dy = states[j].rows(0, n) - cert.nominal_states[j].rows(0, n);
                let kb = cert.gains.block(k, j);
                alpha += (kb * dy)[0];
            }
        }
        let next = spec.augmented(&states[k], alpha)?;
        steps.push(alpha);
        states.push(next);
    }
    Ok(ClosedLoopTrajectory { states, steps })
}
