//! TOML run configuration.
//!
//! A problem is either a named builtin or explicit matrices; the horizon and
//! the steplength interval are always given explicitly.

use std::path::{Path, PathBuf};

use minset_core::experiments;
use minset_core::problem::{AffineSubspace, BoxBounds};
use minset_core::tube::GainFamily;
use minset_core::{
    ConstraintSet, DMatrix, DVector, ParamBox, ParametricQuadratic, ProblemSpec, SmoothingBall,
    SmoothingParams, SteplengthInterval, SynthesisOptions,
};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    horizon: usize,
    steps: RawSteps,
    #[serde(default)]
    synthesis: RawSynthesis,
    smoothing: Option<RawSmoothing>,
    #[serde(default)]
    oracle: RawOracle,
    #[serde(default)]
    report: RawReport,
    output_dir: Option<String>,
    #[serde(default)]
    seed: u64,
    block_dim_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    builtin: Option<String>,
    c3: Option<f64>,
    h0: Option<Vec<Vec<f64>>>,
    h_params: Option<Vec<Vec<Vec<f64>>>>,
    g0: Option<Vec<f64>>,
    g_params: Option<Vec<Vec<f64>>>,
    theta_lower: Option<Vec<f64>>,
    theta_upper: Option<Vec<f64>>,
    xi0: Option<Vec<f64>>,
    iterate_lower: Option<Vec<f64>>,
    iterate_upper: Option<Vec<f64>>,
    constraint: Option<RawConstraint>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawConstraint {
    Free,
    Affine { m: Vec<Vec<f64>>, b: Vec<f64> },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSteps {
    lower: f64,
    upper: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSynthesis {
    gain_family: String,
    kappas: Vec<f64>,
    regularizer_weight: f64,
    max_iterations: usize,
    divergence_factor: f64,
    half_diameter: bool,
    mu_override: Option<f64>,
}

impl Default for RawSynthesis {
    fn default() -> Self {
        let d = SynthesisOptions::default();
        Self {
            gain_family: "zero".into(),
            kappas: Vec::new(),
            regularizer_weight: d.regularizer_weight,
            max_iterations: d.max_iterations,
            divergence_factor: d.divergence_factor,
            half_diameter: d.half_diameter,
            mu_override: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSmoothing {
    delta: f64,
    c_delta: Option<f64>,
    node_count: Option<usize>,
    seed: Option<u64>,
    eps_cap: Option<f64>,
    ball: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOracle {
    grid_points: usize,
    mc_samples: usize,
    smoothing_check_points: usize,
    figure_samples: usize,
}

impl Default for RawOracle {
    fn default() -> Self {
        Self {
            grid_points: 101,
            mc_samples: 1000,
            smoothing_check_points: 1000,
            figure_samples: 10,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    coords: Option<Vec<usize>>,
}

/// Sampling sizes for the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub grid_points: usize,
    pub mc_samples: usize,
    pub smoothing_check_points: usize,
    pub figure_samples: usize,
}

/// A validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub builtin: Option<String>,
    pub spec: ProblemSpec,
    pub synthesis: SynthesisOptions,
    pub smoothing: Option<SmoothingParams>,
    pub oracle: OracleSettings,
    pub report_coords: Vec<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Largest `n + d` for which response blocks are written out in full.
    pub block_dim_cap: usize,
    smoothing_seed_fixed: bool,
}

impl RunConfig {
    /// Applies `--seed`; the quadrature seed follows unless the file fixes it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if !self.smoothing_seed_fixed {
            if let Some(p) = &mut self.smoothing {
                p.seed = seed;
            }
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {msg}"))
}

fn need<T: Clone>(v: &Option<T>, field: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| field_err(field, "missing (required without `builtin`)"))
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(field_err(field, "rows have different lengths"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn core_err(field: &str) -> impl Fn(minset_core::Error) -> CliError + '_ {
    move |e| field_err(field, e)
}

/// A contraction failure is an infeasible run rather than a malformed file.
fn spec_err(e: minset_core::Error) -> CliError {
    match e {
        minset_core::Error::ContractionNotBelowOne { .. } => CliError::Core(e),
        other => field_err("problem", other),
    }
}

fn explicit_fields_present(p: &RawProblem) -> Vec<&'static str> {
    let mut out = Vec::new();
    macro_rules! check {
        ($($f:ident),*) => { $( if p.$f.is_some() { out.push(stringify!($f)); } )* };
    }
    check!(
        h0,
        h_params,
        g0,
        g_params,
        theta_lower,
        theta_upper,
        xi0,
        iterate_lower,
        iterate_upper,
        constraint
    );
    out
}

fn build_spec(
    p: &RawProblem,
    horizon: usize,
    steps: SteplengthInterval,
) -> Result<ProblemSpec, CliError> {
    if let Some(name) = &p.builtin {
        let extra = explicit_fields_present(p);
        if !extra.is_empty() {
            return Err(CliError::Config(format!(
                "problem: give either `builtin` or explicit matrices, not both (found {})",
                extra.join(", ")
            )));
        }
        if p.c3.is_some() && name != "constrained_quadratic" {
            return Err(field_err(
                "problem.c3",
                "only applies to constrained_quadratic",
            ));
        }
        let base = experiments::builtin(name, p.c3.unwrap_or(0.0)).ok_or_else(|| {
            field_err(
                "problem.builtin",
                format!(
                    "unknown builtin `{name}` (expected one of {})",
                    experiments::BUILTIN_NAMES.join(", ")
                ),
            )
        })?;
        return ProblemSpec::new(
            base.objective,
            base.constraint,
            base.theta_box,
            base.xi0,
            steps,
            horizon,
            base.iterate_lower,
            base.iterate_upper,
        )
        .map_err(spec_err);
    }
    if p.c3.is_some() {
        return Err(field_err(
            "problem.c3",
            "only applies to the constrained_quadratic builtin",
        ));
    }
    let h0 = matrix(&need(&p.h0, "problem.h0")?, "problem.h0")?;
    let h_params = need(&p.h_params, "problem.h_params")?
        .iter()
        .map(|m| matrix(m, "problem.h_params"))
        .collect::<Result<Vec<_>, _>>()?;
    let g0 = vector(&need(&p.g0, "problem.g0")?);
    let g_params = need(&p.g_params, "problem.g_params")?
        .iter()
        .map(|g| vector(g))
        .collect();
    let objective =
        ParametricQuadratic::new(h0, h_params, g0, g_params).map_err(core_err("problem"))?;
    let theta_box = ParamBox::new(
        vector(&need(&p.theta_lower, "problem.theta_lower")?),
        vector(&need(&p.theta_upper, "problem.theta_upper")?),
    )
    .map_err(core_err("problem.theta_lower"))?;
    let constraint = match &p.constraint {
        None | Some(RawConstraint::Free) => ConstraintSet::Free,
        Some(RawConstraint::Affine { m, b }) => ConstraintSet::Affine(
            AffineSubspace::new(matrix(m, "problem.constraint.m")?, vector(b))
                .map_err(core_err("problem.constraint"))?,
        ),
        Some(RawConstraint::Box { lo, hi }) => ConstraintSet::Box(
            BoxBounds::new(vector(lo), vector(hi)).map_err(core_err("problem.constraint"))?,
        ),
    };
    ProblemSpec::new(
        objective,
        constraint,
        theta_box,
        vector(&need(&p.xi0, "problem.xi0")?),
        steps,
        horizon,
        vector(&need(&p.iterate_lower, "problem.iterate_lower")?),
        vector(&need(&p.iterate_upper, "problem.iterate_upper")?),
    )
    .map_err(spec_err)
}

fn build_synthesis(s: &RawSynthesis) -> Result<SynthesisOptions, CliError> {
    let gain_family = match s.gain_family.as_str() {
        "zero" => GainFamily::Zero,
        "proportional" => GainFamily::ScalarProportional(s.kappas.clone()),
        other => {
            return Err(field_err(
                "synthesis.gain_family",
                format!("unknown family `{other}` (expected `zero` or `proportional`)"),
            ))
        }
    };
    let out = SynthesisOptions {
        gain_family,
        regularizer_weight: s.regularizer_weight,
        max_iterations: s.max_iterations,
        divergence_factor: s.divergence_factor,
        half_diameter: s.half_diameter,
        mu_override: s.mu_override,
        nominal_step: None,
    };
    out.validate().map_err(core_err("synthesis"))?;
    Ok(out)
}

fn build_smoothing(s: &RawSmoothing, seed: u64) -> Result<SmoothingParams, CliError> {
    let ball = match s.ball.as_deref().unwrap_or("state") {
        "state" => SmoothingBall::State,
        "full" => SmoothingBall::Full,
        other => {
            return Err(field_err(
                "smoothing.ball",
                format!("unknown ball `{other}` (expected `state` or `full`)"),
            ))
        }
    };
    let d = SmoothingParams::default_with(ball);
    SmoothingParams::new(
        s.delta,
        s.c_delta.unwrap_or(s.delta),
        s.node_count.unwrap_or(d.node_count),
        s.seed.unwrap_or(seed),
        s.eps_cap.unwrap_or(d.eps_cap),
        ball,
    )
    .map_err(core_err("smoothing"))
}

fn default_coords(builtin: Option<&str>, n: usize) -> Vec<usize> {
    if builtin == Some("lqr_double_integrator") {
        [0, 3, 6]
            .iter()
            .flat_map(|&t| experiments::lqr_position_coords(t))
            .collect()
    } else {
        (0..n.min(16)).collect()
    }
}

/// Parses TOML text. `name` labels the run in artifacts.
pub fn parse_config_str(text: &str, name: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let steps =
        SteplengthInterval::new(raw.steps.lower, raw.steps.upper).map_err(core_err("steps"))?;
    let output_dir = PathBuf::from(
        raw.output_dir
            .clone()
            .unwrap_or_else(|| format!("out/{name}")),
    );
    let spec = build_spec(&raw.problem, raw.horizon, steps).map_err(|e| match e {
        CliError::Core(error) => CliError::Infeasible {
            name: name.to_string(),
            output_dir: output_dir.clone(),
            error,
        },
        other => other,
    })?;
    let synthesis = build_synthesis(&raw.synthesis)?;
    let smoothing = raw
        .smoothing
        .as_ref()
        .map(|s| build_smoothing(s, raw.seed))
        .transpose()?;
    let smoothing_seed_fixed = raw.smoothing.as_ref().is_some_and(|s| s.seed.is_some());
    if raw.oracle.grid_points == 0 {
        return Err(field_err("oracle.grid_points", "must be at least 1"));
    }
    let n = spec.n();
    let report_coords = match raw.report.coords {
        Some(c) => {
            if let Some(bad) = c.iter().find(|&&i| i >= n) {
                return Err(field_err(
                    "report.coords",
                    format!("coordinate {bad} out of range (n = {n})"),
                ));
            }
            c
        }
        None => default_coords(raw.problem.builtin.as_deref(), n),
    };
    Ok(RunConfig {
        name: name.to_string(),
        builtin: raw.problem.builtin.clone(),
        spec,
        synthesis,
        smoothing,
        oracle: OracleSettings {
            grid_points: raw.oracle.grid_points,
            mc_samples: raw.oracle.mc_samples,
            smoothing_check_points: raw.oracle.smoothing_check_points,
            figure_samples: raw.oracle.figure_samples,
        },
        report_coords,
        output_dir,
        seed: raw.seed,
        block_dim_cap: raw.block_dim_cap.unwrap_or(8),
        smoothing_seed_fixed,
    })
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    parse_config_str(&text, &name).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
horizon = 20
[problem]
builtin = "scalar_quadratic"
[steps]
lower = 0.4
upper = 0.6
"#;

    #[test]
    fn builtin_scalar() {
        let c = parse_config_str(SCALAR, "s").unwrap();
        assert_eq!(c.spec.n(), 1);
        assert_eq!(c.spec.horizon, 20);
        assert_eq!(c.spec.objective.h0()[(0, 0)], 2.0);
        assert_eq!(c.spec.objective.g_params()[0][0], 1.0);
        assert_eq!(c.report_coords, vec![0]);
        assert_eq!(c.output_dir, PathBuf::from("out/s"));
    }

    #[test]
    fn builtin_lqr() {
        let text = "horizon = 10\n[problem]\nbuiltin = \"lqr_double_integrator\"\n[steps]\nlower = 9.9\nupper = 10.1\n";
        let c = parse_config_str(text, "l").unwrap();
        assert_eq!(c.spec.n(), 64);
        assert_eq!(c.spec.theta_box.lower()[0], 0.9);
        assert_eq!(c.report_coords, vec![0, 2, 18, 20, 36, 38]);
    }

    #[test]
    fn missing_steplength_field_named() {
        let text =
            "horizon = 20\n[problem]\nbuiltin = \"scalar_quadratic\"\n[steps]\nlower = 0.4\n";
        let err = parse_config_str(text, "s").unwrap_err().to_string();
        assert!(err.contains("upper"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_builtin() {
        let text = SCALAR.replace("scalar_quadratic", "quartic");
        let err = parse_config_str(&text, "s").unwrap_err().to_string();
        assert!(err.contains("unknown builtin"), "{err}");
    }

    #[test]
    fn builtin_and_matrices_conflict() {
        let text = SCALAR.replace(
            "builtin = \"scalar_quadratic\"",
            "builtin = \"scalar_quadratic\"\nh0 = [[1.0]]",
        );
        let err = parse_config_str(&text, "s").unwrap_err().to_string();
        assert!(err.contains("either"), "{err}");
    }

    #[test]
    fn explicit_problem() {
        let text = r#"
horizon = 5
[problem]
h0 = [[2.0]]
h_params = [[[0.0]]]
g0 = [0.0]
g_params = [[1.0]]
theta_lower = [-0.1]
theta_upper = [0.1]
xi0 = [1.0]
iterate_lower = [-10.0]
iterate_upper = [10.0]
constraint = { kind = "box", lo = [0.0], hi = [inf] }
[steps]
lower = 0.4
upper = 0.6
[smoothing]
delta = 0.1
"#;
        let c = parse_config_str(text, "x").unwrap();
        assert!(!c.spec.constraint.is_smooth());
        assert_eq!(c.smoothing.as_ref().unwrap().delta, 0.1);
    }

    #[test]
    fn widened_steps_are_infeasible() {
        let text = SCALAR.replace("upper = 0.6", "upper = 1.2");
        match parse_config_str(&text, "s").unwrap_err() {
            CliError::Infeasible { error, .. } => {
                assert!(error.to_string().contains("contraction_rate >= 1"))
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn seed_propagates_to_quadrature() {
        let text = format!("{SCALAR}[smoothing]\ndelta = 0.1\n");
        let mut c = parse_config_str(&text, "s").unwrap();
        c.set_seed(7);
        assert_eq!(c.smoothing.unwrap().seed, 7);
    }
}
