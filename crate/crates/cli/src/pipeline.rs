//! The certify, oracle and report stages.

use std::fs;
use std::path::Path;

use minset_core::oracle::{
    containment_check, ift_baseline, minimizer_hull, rollout_hull, theta_grid, theta_uniform,
    BoxSequence, ContainmentReport,
};
use minset_core::smoothing::Smoother;
use minset_core::tube::{
    certify_auto, closed_loop_rollout, CertificateMode, ConstantSource, TubeCertificate,
};
use minset_core::{ConstraintSet, DVector, SmoothingParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::artifacts::{self, constant, Table};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::format::fmt17;

/// Slack allowed when comparing realized steplengths against `[c, C]`.
const STEP_TOL: f64 = 1e-9;

/// Outcome of a stage, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Infeasible,
    ContainmentFailure,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Infeasible => 2,
            Status::ContainmentFailure => 3,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn certify_config(cfg: &RunConfig) -> minset_core::Result<TubeCertificate> {
    certify_auto(&cfg.spec, &cfg.synthesis, cfg.smoothing.as_ref())
}

/// Writes a failure certificate and drops any tube left from an earlier run.
pub fn write_failure(dir: &Path, doc: &Value) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let tube = dir.join(artifacts::TUBE_CSV);
    if tube.exists() {
        fs::remove_file(&tube).map_err(|e| CliError::io(&tube, e))?;
    }
    artifacts::write_json(&dir.join(artifacts::CERTIFICATE_JSON), doc)
}

pub fn run_certify(cfg: &RunConfig) -> Result<Status, CliError> {
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    match certify_config(cfg) {
        Ok(cert) => {
            artifacts::tube_table(&cert).write(&dir.join(artifacts::TUBE_CSV))?;
            artifacts::write_json(
                &dir.join(artifacts::CERTIFICATE_JSON),
                &artifacts::certificate_json(cfg, &cert),
            )?;
            Ok(if cert.sound {
                Status::Ok
            } else {
                Status::Infeasible
            })
        }
        Err(e) => {
            write_failure(dir, &artifacts::failure_for_config(cfg, &e))?;
            Ok(Status::Infeasible)
        }
    }
}

/// Everything the oracle measured for one certificate.
pub struct OracleResult {
    pub rollouts: usize,
    pub reach: ContainmentReport,
    pub minimizer: ContainmentReport,
    pub rollout_box: BoxSequence,
    pub minimizer_box: BoxSequence,
    pub max_tube_excess: f64,
    pub steps_in_range: bool,
    pub figure: Vec<Vec<DVector<f64>>>,
    pub baseline: Option<Value>,
    pub smoothing: Option<Value>,
    pub pass: bool,
}

fn evenly_spaced(len: usize, count: usize) -> Vec<usize> {
    match count.min(len) {
        0 => Vec::new(),
        1 => vec![len / 2],
        c => (0..c).map(|i| i * (len - 1) / (c - 1)).collect(),
    }
}

fn smoothing_check(cfg: &RunConfig, cert: &TubeCertificate) -> Result<Option<Value>, CliError> {
    let CertificateMode::Smoothed {
        delta, ell, ball, ..
    } = cert.mode
    else {
        return Ok(None);
    };
    let spec = &cfg.spec;
    let mut params = cfg
        .smoothing
        .clone()
        .unwrap_or_else(|| SmoothingParams::default_with(ball));
    params.ball = ball;
    let smoother = Smoother::new(spec, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a11);
    let n = spec.n();
    let bound = ell * delta;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_gap = 0.0_f64;
    let points = cfg.oracle.smoothing_check_points;
    for _ in 0..points {
        let xi = DVector::from_fn(n, |i, _| {
            rng.random_range(spec.iterate_lower[i]..=spec.iterate_upper[i])
        });
        let lo = spec.theta_box.lower();
        let hi = spec.theta_box.upper();
        let theta = DVector::from_fn(spec.d(), |i, _| rng.random_range(lo[i]..=hi[i]));
        let alpha = rng.random_range(spec.steps.lower()..=spec.steps.upper());
        let zeta = spec.state(&xi, &theta);
        let (value, eps) = smoother.value_with_error(&zeta, alpha)?;
        let exact = spec.augmented(&zeta, alpha)?;
        let gap = (value - exact).amax();
        worst_gap = worst_gap.max(gap);
        worst = worst.max(gap - bound - eps);
    }
    let pass = points == 0 || worst <= 0.0;
    Ok(Some(json!({
        "points": points,
        "bound": constant(bound, ConstantSource::Computed),
        "max_gap": worst_gap,
        "max_excess": if points == 0 { 0.0 } else { worst },
        "pass": pass,
    })))
}

fn baseline(cfg: &RunConfig, cert: &TubeCertificate) -> Result<Option<Value>, CliError> {
    if !matches!(cfg.spec.constraint, ConstraintSet::Affine(_)) || cfg.spec.d() != 1 {
        return Ok(None);
    }
    let b = ift_baseline(&cfg.spec)?;
    let width = cert.final_inflated_width();
    Ok(Some(json!({
        "lipschitz_bound": constant(b.lipschitz_bound, ConstantSource::Computed),
        "induced_width": constant(b.induced_width, ConstantSource::Computed),
        "certified_width": constant(width, ConstantSource::Computed),
        "ratio": constant(b.comparison_ratio(width), ConstantSource::Computed),
    })))
}

/// Rolls the certified feedback law out over sampled parameters and compares
/// against the certified sets.
pub fn evaluate(cfg: &RunConfig, cert: &TubeCertificate) -> Result<OracleResult, CliError> {
    let spec = &cfg.spec;
    let n = spec.n();
    let grid = theta_grid(&spec.theta_box, cfg.oracle.grid_points, cfg.seed);
    let mut thetas = grid.clone();
    thetas.extend(theta_uniform(
        &spec.theta_box,
        cfg.oracle.mc_samples,
        cfg.seed,
    ));
    let mut max_excess = f64::NEG_INFINITY;
    let mut steps_in_range = true;
    let (c_lo, c_hi) = (spec.steps.lower(), spec.steps.upper());
    let rollout_box = rollout_hull(&thetas, |theta| {
        let traj = closed_loop_rollout(spec, cert, theta)?;
        for k in 0..traj.states.len() {
            max_excess = max_excess.max(traj.deviation(cert, k) - cert.tau[k]);
        }
        if traj
            .steps
            .iter()
            .any(|&a| a < c_lo - STEP_TOL || a > c_hi + STEP_TOL)
        {
            steps_in_range = false;
        }
        Ok(traj
            .states
            .iter()
            .map(|z| z.rows(0, n).into_owned())
            .collect())
    })?;
    let figure = evenly_spaced(grid.len(), cfg.oracle.figure_samples)
        .into_iter()
        .map(|i| {
            closed_loop_rollout(spec, cert, &grid[i])
                .map(|t| t.states.iter().map(|z| z.rows(0, n).into_owned()).collect())
        })
        .collect::<minset_core::Result<Vec<_>>>()?;
    let reach = containment_check(&BoxSequence::reach(&cert.outer), &rollout_box)?;
    let hull = minimizer_hull(spec, cfg.oracle.grid_points, cfg.seed)?;
    let single = BoxSequence::from_hull(&hull);
    let horizon = cert.horizon();
    let minimizer_box = BoxSequence {
        lo: vec![single.lo[0].clone(); horizon + 1],
        hi: vec![single.hi[0].clone(); horizon + 1],
    };
    let inflated = BoxSequence {
        lo: cert.outer.inflated_lo.clone(),
        hi: cert.outer.inflated_hi.clone(),
    };
    let minimizer = containment_check(&inflated, &minimizer_box)?;
    let baseline = baseline(cfg, cert)?;
    let smoothing = smoothing_check(cfg, cert)?;
    let smoothing_ok = smoothing
        .as_ref()
        .is_none_or(|v| v["pass"].as_bool().unwrap_or(false));
    let pass = reach.pass && minimizer.pass && max_excess <= 0.0 && steps_in_range && smoothing_ok;
    Ok(OracleResult {
        rollouts: thetas.len(),
        reach,
        minimizer,
        rollout_box,
        minimizer_box: single,
        max_tube_excess: max_excess,
        steps_in_range,
        figure,
        baseline,
        smoothing,
        pass,
    })
}

fn oracle_table(r: &OracleResult) -> Table {
    let mut t = Table::new(&artifacts::ORACLE_HEADER);
    let b = &r.rollout_box;
    for k in 0..b.len() {
        for i in 0..b.lo[k].len() {
            t.row([
                "rollout_hull".into(),
                String::new(),
                k.to_string(),
                i.to_string(),
                fmt17(b.lo[k][i]),
                fmt17(b.hi[k][i]),
            ]);
        }
    }
    let m = &r.minimizer_box;
    for i in 0..m.lo[0].len() {
        t.row([
            "minimizer_hull".into(),
            String::new(),
            String::new(),
            i.to_string(),
            fmt17(m.lo[0][i]),
            fmt17(m.hi[0][i]),
        ]);
    }
    for (s, traj) in r.figure.iter().enumerate() {
        for (k, x) in traj.iter().enumerate() {
            for i in 0..x.len() {
                t.row([
                    "sample".into(),
                    s.to_string(),
                    k.to_string(),
                    i.to_string(),
                    fmt17(x[i]),
                    fmt17(x[i]),
                ]);
            }
        }
    }
    t
}

fn containment_doc(cfg: &RunConfig, r: &OracleResult) -> Value {
    json!({
        "run": cfg.name,
        "status": if r.pass { "pass" } else { "fail" },
        "pass": r.pass,
        "samples": {
            "grid_points": cfg.oracle.grid_points,
            "mc_samples": cfg.oracle.mc_samples,
            "rollouts": r.rollouts,
            "seed": constant(cfg.seed as f64, ConstantSource::Config),
        },
        "reach": artifacts::containment_json(&r.reach),
        "minimizer": artifacts::containment_json(&r.minimizer),
        "tube_deviation": { "max_excess": r.max_tube_excess, "pass": r.max_tube_excess <= 0.0 },
        "steplengths_in_range": r.steps_in_range,
        "baseline": r.baseline,
        "smoothing_check": r.smoothing,
    })
}

pub fn run_oracle(cfg: &RunConfig) -> Result<Status, CliError> {
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let cert = match certify_config(cfg) {
        Ok(c) => c,
        Err(e) => {
            let doc = json!({
                "run": cfg.name,
                "status": "infeasible",
                "pass": false,
                "reason": { "kind": e.kind(), "message": e.to_string() },
            });
            artifacts::write_json(&dir.join(artifacts::CONTAINMENT_JSON), &doc)?;
            return Ok(Status::Infeasible);
        }
    };
    let result = evaluate(cfg, &cert)?;
    oracle_table(&result).write(&dir.join(artifacts::ORACLE_CSV))?;
    artifacts::write_json(
        &dir.join(artifacts::CONTAINMENT_JSON),
        &containment_doc(cfg, &result),
    )?;
    Ok(if result.pass {
        Status::Ok
    } else {
        Status::ContainmentFailure
    })
}

const TUBE_SERIES: [(&str, usize); 5] = [
    ("nominal", 2),
    ("tube_lo", 3),
    ("tube_hi", 4),
    ("inflated_lo", 5),
    ("inflated_hi", 6),
];

/// Joins tube and oracle artifacts into a long-format table for plotting.
pub fn run_report(cfg: &RunConfig) -> Result<Status, CliError> {
    let dir = &cfg.output_dir;
    let tube = artifacts::read_table(&dir.join(artifacts::TUBE_CSV), &artifacts::TUBE_HEADER)?;
    let oracle =
        artifacts::read_table(&dir.join(artifacts::ORACLE_CSV), &artifacts::ORACLE_HEADER)?;
    let mut t = Table::new(&artifacts::FIGURE_HEADER);
    for &coord in &cfg.report_coords {
        let c = coord.to_string();
        for (series, col) in TUBE_SERIES {
            for r in tube.iter().filter(|r| r[1] == c) {
                t.row([series, "", &r[0], &r[1], &r[col]]);
            }
        }
        for (kind, lo, hi) in [
            ("rollout_hull", "rollout_lo", "rollout_hi"),
            ("minimizer_hull", "minimizer_lo", "minimizer_hi"),
        ] {
            for (series, col) in [(lo, 4), (hi, 5)] {
                for r in oracle.iter().filter(|r| &r[0] == kind && r[3] == c) {
                    t.row([series, "", &r[2], &r[3], &r[col]]);
                }
            }
        }
        for r in oracle.iter().filter(|r| &r[0] == "sample" && r[3] == c) {
            t.row(["sample", &r[1], &r[2], &r[3], &r[4]]);
        }
    }
    t.write(&dir.join(artifacts::FIGURE_CSV))?;
    Ok(Status::Ok)
}

/// Certify, then oracle, then report; stops at the first non-zero status.
pub fn run_all(cfg: &RunConfig) -> Result<Status, CliError> {
    let s = run_certify(cfg)?;
    if s != Status::Ok {
        return Ok(s);
    }
    let s = run_oracle(cfg)?;
    if s == Status::Infeasible {
        return Ok(s);
    }
    run_report(cfg)?;
    Ok(s)
}
