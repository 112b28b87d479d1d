//! CSV and JSON artifacts.

use std::fs;
use std::path::Path;

use minset_core::oracle::ContainmentReport;
use minset_core::tube::{CandidateReport, CertificateMode, ConstantSource, TubeCertificate};
use minset_core::{DMatrix, DVector, SmoothingBall};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::format::fmt17;

pub const TUBE_CSV: &str = "tube.csv";
pub const CERTIFICATE_JSON: &str = "certificate.json";
pub const ORACLE_CSV: &str = "oracle.csv";
pub const CONTAINMENT_JSON: &str = "containment.json";
pub const FIGURE_CSV: &str = "figure_data.csv";

pub const TUBE_HEADER: [&str; 7] = [
    "k",
    "coord",
    "nominal",
    "tube_lo",
    "tube_hi",
    "inflated_lo",
    "inflated_hi",
];
pub const ORACLE_HEADER: [&str; 6] = ["kind", "sample", "k", "coord", "lo", "hi"];
pub const FIGURE_HEADER: [&str; 5] = ["series", "sample", "k", "coord", "value"];

/// Buffered CSV table with a fixed header.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        let bytes = self.writer.into_inner().map_err(|e| CliError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn tube_table(cert: &TubeCertificate) -> Table {
    let mut t = Table::new(&TUBE_HEADER);
    let o = &cert.outer;
    for k in 0..=cert.horizon() {
        for i in 0..o.reach_lo[k].len() {
            t.row([
                k.to_string(),
                i.to_string(),
                fmt17(cert.nominal_states[k][i]),
                fmt17(o.reach_lo[k][i]),
                fmt17(o.reach_hi[k][i]),
                fmt17(o.inflated_lo[k][i]),
                fmt17(o.inflated_hi[k][i]),
            ]);
        }
    }
    t
}

pub fn constant(value: f64, source: ConstantSource) -> Value {
    json!({ "value": value, "source": source.as_str() })
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect::<Vec<f64>>())
        .collect::<Vec<_>>())
}

fn problem_json(cfg: &RunConfig) -> Value {
    json!({
        "builtin": cfg.builtin,
        "n": cfg.spec.n(),
        "d": cfg.spec.d(),
        "horizon": cfg.spec.horizon,
        "constraint": cfg.spec.constraint.kind(),
    })
}

fn ball_name(b: SmoothingBall) -> &'static str {
    match b {
        SmoothingBall::State => "state",
        SmoothingBall::Full => "full",
    }
}

fn candidate_json(c: &CandidateReport) -> Value {
    json!({
        "kappa": c.kappa,
        "tau_final": c.tau_final,
        "cost": c.cost,
        "margins_ok": c.margins_ok,
        "failure": c.failure,
    })
}

/// The full certificate, sufficient to re-check the tube recursion offline.
pub fn certificate_json(cfg: &RunConfig, cert: &TubeCertificate) -> Value {
    use ConstantSource::{Computed, Config};
    let (m, l) = cfg.spec.convexity_bounds().unwrap_or((f64::NAN, f64::NAN));
    let mut constants = serde_json::Map::new();
    let mut put = |k: &str, v: Value| {
        constants.insert(k.to_string(), v);
    };
    put("m", constant(m, Computed));
    put("L", constant(l, Computed));
    put("gamma", constant(cert.contraction.gamma, Computed));
    put("r0", constant(cert.contraction.r0, Computed));
    put(
        "theta_diameter",
        constant(cfg.spec.theta_box.diameter(), Computed),
    );
    put("initial_bound", constant(cert.diameter_bound, Computed));
    put("steplength_lower", constant(cfg.spec.steps.lower(), Config));
    put("steplength_upper", constant(cfg.spec.steps.upper(), Config));
    put(
        "nominal_step",
        constant(
            cert.nominal_steps.first().copied().unwrap_or(f64::NAN),
            Computed,
        ),
    );
    put(
        "regularizer_weight",
        constant(cfg.synthesis.regularizer_weight, Config),
    );
    put(
        "divergence_factor",
        constant(cfg.synthesis.divergence_factor, Config),
    );
    put("horizon", constant(cfg.spec.horizon as f64, Config));
    let mode = match &cert.mode {
        CertificateMode::Smooth => json!({ "name": "Smooth" }),
        CertificateMode::Smoothed {
            delta,
            ell,
            mu_tilde,
            eps_quad,
            ball,
        } => {
            put("delta", constant(*delta, Config));
            put("ell", constant(*ell, Computed));
            put("smoothing_error", constant(ell * delta, Computed));
            put("mu_tilde", constant(*mu_tilde, Computed));
            put("eps_quad", constant(*eps_quad, Computed));
            json!({ "name": "Smoothed", "ball": ball_name(*ball) })
        }
    };
    let s = cert.model.dim();
    let blocks = if s <= cfg.block_dim_cap {
        let nb = cert.response.nblocks();
        let mut out = Vec::new();
        for k in 0..nb {
            for j in 0..=k {
                out.push(json!({
                    "k": k,
                    "j": j,
                    "zeta_d": mat_json(&cert.response.zeta_d.block(k, j)),
                    "alpha_d": mat_json(&cert.response.alpha_d.block(k, j)),
                }));
            }
        }
        json!({ "serialization": "blocks", "blocks": out })
    } else {
        json!({ "serialization": "norms", "blocks": Value::Null })
    };
    let status = if cert.sound { "sound" } else { "unsound" };
    let fp = cert.fixed_point_residual();
    json!({
        "run": cfg.name,
        "problem": problem_json(cfg),
        "status": status,
        "sound": cert.sound,
        "reason": if cert.sound { Value::Null } else {
            json!({ "kind": "margin_violation", "message": format!("largest steplength margin {}", cert.max_margin()) })
        },
        "mode": mode,
        "half_diameter": cfg.synthesis.half_diameter,
        "constants": Value::Object(constants),
        "mu": { "values": vec_json(&cert.mu), "source": cert.mu_source.as_str() },
        "seed": constant(cfg.seed as f64, Config),
        "theta_hat": vec_json(&cert.theta_hat),
        "nominal_steps": cert.nominal_steps,
        "nominal_states": cert.nominal_states.iter().map(vec_json).collect::<Vec<_>>(),
        "beta": cert.contraction.beta,
        "tau": cert.tau,
        "margins": cert.margins,
        "selected_kappa": cert.selected_kappa,
        "candidates": cert.candidates.iter().map(candidate_json).collect::<Vec<_>>(),
        "fixed_point": { "max_slack": fp, "verified": fp <= 0.0 },
        "disturbance_model": {
            "constant": vec_json(&cert.model.constant),
            "linear": cert.model.linear.iter().map(vec_json).collect::<Vec<_>>(),
            "quadratic": vec_json(&cert.model.quadratic),
        },
        "response": blocks,
        "coefficients": {
            "initial": cert.coefficients.initial,
            "initial_alpha": cert.coefficients.initial_alpha,
            "terms": cert.coefficients.terms,
        },
    })
}

/// Certificate document for a run that produced no tube.
pub fn failure_json(name: &str, problem: Option<Value>, err: &minset_core::Error) -> Value {
    json!({
        "run": name,
        "problem": problem,
        "status": "infeasible",
        "sound": false,
        "reason": { "kind": err.kind(), "message": err.to_string() },
    })
}

pub fn failure_for_config(cfg: &RunConfig, err: &minset_core::Error) -> Value {
    failure_json(&cfg.name, Some(problem_json(cfg)), err)
}

pub fn containment_json(r: &ContainmentReport) -> Value {
    json!({
        "pass": r.pass,
        "worst_slack": r.worst_slack,
        "worst_step": r.worst_step,
        "worst_coord": r.worst_coord,
        "slack_per_step": r.slack_per_step,
    })
}

/// Reads a CSV artifact into its header and records.
pub fn read_table(
    path: &Path,
    expected_header: &[&str],
) -> Result<Vec<csv::StringRecord>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.file_name().map_or_else(
            || path.display().to_string(),
            |f| f.to_string_lossy().into_owned(),
        )));
    }
    let bad = |message: String| CliError::Artifact {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != expected_header {
        return Err(bad(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    rdr.records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))
}
