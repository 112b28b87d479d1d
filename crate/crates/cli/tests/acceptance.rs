//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use minset_core::convergence::contraction_rate;
use minset_core::linearization::{curvature_bounds, jacobians, InputBox, JacobianPair};
use minset_core::sls::{
    build_stacked, gains_from_response, response_from_gains, validate_response, BlockMatrix,
};
use minset_core::{
    experiments, ConstraintSet, DMatrix, DVector, GainSchedule, ProblemSpec, SteplengthInterval,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const EXPERIMENTS: [&str; 3] = [
    "scalar_quadratic",
    "lqr_double_integrator",
    "constrained_quadratic",
];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"))
}

fn run_all(name: &str, out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_minset"))
        .args(["all", "--config"])
        .arg(config(name))
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !o.status.success() {
        return Err(format!(
            "{name}: exit {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).trim()
        ));
    }
    Ok(elapsed)
}

fn load_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn num(v: &Value) -> Result<f64, String> {
    v.as_f64()
        .ok_or_else(|| format!("expected a number, got {v}"))
}

fn nums(v: &Value) -> Result<Vec<f64>, String> {
    v.as_array()
        .ok_or("expected an array")?
        .iter()
        .map(num)
        .collect()
}

fn matrix(v: &Value) -> Result<Vec<Vec<f64>>, String> {
    v.as_array()
        .ok_or("expected a matrix")?
        .iter()
        .map(nums)
        .collect()
}

/// `(k, coord) -> columns` from tube.csv.
type TubeRows = BTreeMap<(usize, usize), [f64; 5]>;

fn read_tube(dir: &Path) -> Result<TubeRows, String> {
    let mut rdr = csv::Reader::from_path(dir.join("tube.csv")).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for r in rdr.records() {
        let r = r.map_err(|e| e.to_string())?;
        let f = |i: usize| r[i].parse::<f64>().map_err(|e| e.to_string());
        let key = (
            r[0].parse().map_err(|_| "bad k")?,
            r[1].parse().map_err(|_| "bad coord")?,
        );
        out.insert(key, [f(2)?, f(3)?, f(4)?, f(5)?, f(6)?]);
    }
    Ok(out)
}

/// Rollout hull rows of oracle.csv, keyed like the tube.
type HullRows = BTreeMap<(usize, usize), (f64, f64)>;

fn read_rollout_hull(dir: &Path) -> Result<HullRows, String> {
    let mut rdr = csv::Reader::from_path(dir.join("oracle.csv")).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for r in rdr.records() {
        let r = r.map_err(|e| e.to_string())?;
        if &r[0] == "rollout_hull" {
            let key = (
                r[2].parse().map_err(|_| "bad k")?,
                r[3].parse().map_err(|_| "bad coord")?,
            );
            let lo = r[4].parse::<f64>().map_err(|e| e.to_string())?;
            let hi = r[5].parse::<f64>().map_err(|e| e.to_string())?;
            out.insert(key, (lo, hi));
        }
    }
    Ok(out)
}

/// Every rollout hull interval sits inside the reach tube at the same step.
fn hull_inside_tube(dir: &Path) -> Result<usize, String> {
    let tube = read_tube(dir)?;
    let hull = read_rollout_hull(dir)?;
    check(
        hull.len() == tube.len(),
        format!("hull has {} rows, tube {}", hull.len(), tube.len()),
    )?;
    for (key, (lo, hi)) in &hull {
        let t = tube.get(key).ok_or(format!("no tube row for {key:?}"))?;
        check(
            t[1] <= *lo && *hi <= t[2],
            format!(
                "hull [{lo}, {hi}] escapes tube [{}, {}] at {key:?}",
                t[1], t[2]
            ),
        )?;
    }
    Ok(hull.len())
}

fn final_inflated(dir: &Path, coord: usize) -> Result<(f64, f64), String> {
    let tube = read_tube(dir)?;
    let k = tube.keys().map(|k| k.0).max().ok_or("empty tube")?;
    let r = tube.get(&(k, coord)).ok_or("missing final row")?;
    Ok((r[3], r[4]))
}

fn criterion_1() -> Outcome {
    let scalar = SteplengthInterval::new(0.4, 0.6).map_err(|e| e.to_string())?;
    let lqr = SteplengthInterval::new(9.9, 10.1).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let g1 = contraction_rate(2.0, 2.0, &scalar).map_err(|e| e.to_string())?;
    let g2 = contraction_rate(0.09, 0.11, &lqr).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let r3 = |x: f64| (x * 1000.0).round() / 1000.0;
    check(r3(g1) == 0.2, format!("scalar gamma {g1}"))?;
    check(r3(g2) == 0.111, format!("lqr gamma {g2}"))?;
    check(
        elapsed < Duration::from_millis(1),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!("gamma = {g1:.3} and {g2:.3} in {elapsed:?}"))
}

fn criterion_2(root: &Path) -> Outcome {
    let dir = root.join("scalar_quadratic");
    let t = run_all("scalar_quadratic", &dir)?;
    let cert = load_json(&dir.join("certificate.json"))?;
    check(cert["sound"] == Value::Bool(true), "certificate not sound")?;
    let (lo, hi) = final_inflated(&dir, 0)?;
    check(
        lo <= -0.05 && hi >= 0.05,
        format!("final box [{lo}, {hi}] misses [-0.05, 0.05]"),
    )?;
    let c = load_json(&dir.join("containment.json"))?;
    check(
        c["samples"]["grid_points"].as_u64() == Some(1001),
        "oracle grid is not 1001 points",
    )?;
    check(c["pass"] == Value::Bool(true), "oracle containment failed")?;
    let rows = hull_inside_tube(&dir)?;
    check(t < Duration::from_secs(1), format!("took {t:?}"))?;
    Ok(format!(
        "final box [{lo:.4}, {hi:.4}], {rows} hull rows inside tube, {t:?}"
    ))
}

fn criterion_3(root: &Path) -> Outcome {
    let dir = root.join("lqr_double_integrator");
    let t = run_all("lqr_double_integrator", &dir)?;
    let cert = load_json(&dir.join("certificate.json"))?;
    check(cert["sound"] == Value::Bool(true), "certificate not sound")?;
    let c = load_json(&dir.join("containment.json"))?;
    check(
        c["samples"]["mc_samples"].as_u64() >= Some(1000),
        "fewer than 1000 Monte-Carlo rollouts",
    )?;
    check(
        c["reach"]["pass"] == Value::Bool(true),
        "rollouts escape the tube",
    )?;
    hull_inside_tube(&dir)?;
    let baseline = num(&c["baseline"]["induced_width"]["value"])?;
    check(
        (baseline - 35.0).abs() <= 2.0,
        format!("baseline {baseline}"),
    )?;
    let tube = read_tube(&dir)?;
    let k = tube.keys().map(|k| k.0).max().unwrap_or(0);
    let width = tube
        .iter()
        .filter(|(key, _)| key.0 == k)
        .map(|(_, r)| r[4] - r[3])
        .fold(0.0, f64::max);
    let ratio = baseline / width;
    check(ratio >= 100.0, format!("ratio {ratio}"))?;
    check(t < Duration::from_secs(60), format!("took {t:?}"))?;
    Ok(format!(
        "baseline {baseline:.2}, certified width {width:.4}, ratio {ratio:.1}, {t:?}"
    ))
}

fn criterion_4(root: &Path) -> Outcome {
    let dir = root.join("constrained_quadratic");
    let t = run_all("constrained_quadratic", &dir)?;
    let cert = load_json(&dir.join("certificate.json"))?;
    check(cert["sound"] == Value::Bool(true), "certificate not sound")?;
    check(cert["mode"]["name"] == "Smoothed", "not smoothed")?;
    let delta = num(&cert["constants"]["delta"]["value"])?;
    check(delta == 0.1, format!("delta {delta}"))?;
    let c1 = experiments::CONSTRAINED_C1;
    let c2 = experiments::CONSTRAINED_C2;
    let (mut s_lo, mut s_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=1000 {
        let theta = -0.1 + 0.2 * i as f64 / 1000.0;
        let x = (-c2 * theta / (2.0 * c1)).max(0.0);
        s_lo = s_lo.min(x);
        s_hi = s_hi.max(x);
    }
    let (lo, hi) = final_inflated(&dir, 0)?;
    check(
        lo <= s_lo && s_hi <= hi,
        format!("final box [{lo}, {hi}] misses [{s_lo}, {s_hi}]"),
    )?;
    let c = load_json(&dir.join("containment.json"))?;
    let sc = &c["smoothing_check"];
    check(
        sc["points"].as_u64() == Some(1000),
        "smoothing check did not use 1000 points",
    )?;
    check(
        sc["pass"] == Value::Bool(true),
        format!("smoothing check failed: {sc}"),
    )?;
    check(c["pass"] == Value::Bool(true), "oracle containment failed")?;
    check(t < Duration::from_secs(30), format!("took {t:?}"))?;
    Ok(format!(
        "final box [{lo:.4}, {hi:.4}] covers [{s_lo:.5}, {s_hi:.5}], smoothing max gap {:.2e}, {t:?}",
        num(&sc["max_gap"])?
    ))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_res, mut worst_trip) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let horizon = rng.random_range(1..=8);
        let n = rng.random_range(1..=3);
        let d = rng.random_range(0..=1);
        let s = n + d;
        let jac: Vec<_> = (0..horizon)
            .map(|_| JacobianPair {
                a: DMatrix::from_fn(s, s, |_, _| rng.random_range(-0.5..0.5)),
                b: DMatrix::from_fn(s, 1, |_, _| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let sys = build_stacked(&jac, n, d).map_err(|e| e.to_string())?;
        let mut kb = BlockMatrix::zeros(horizon + 1, 1, n);
        for t in 0..=horizon {
            for j in 0..=t {
                kb.set(
                    t,
                    j,
                    DMatrix::from_fn(1, n, |_, _| rng.random_range(-0.3..0.3)),
                );
            }
        }
        let gains = GainSchedule::from_blocks(kb).map_err(|e| e.to_string())?;
        let phi = response_from_gains(&sys, &gains).map_err(|e| e.to_string())?;
        worst_res = worst_res.max(validate_response(&sys, &phi).max());
        let back = gains_from_response(&phi).map_err(|e| e.to_string())?;
        for t in 0..=horizon {
            for j in 0..=t {
                worst_trip = worst_trip.max((back.block(t, j) - gains.block(t, j)).amax());
            }
        }
    }
    check(worst_res < 1e-10, format!("residual {worst_res:e}"))?;
    check(worst_trip < 1e-8, format!("round trip {worst_trip:e}"))?;
    Ok(format!(
        "100 systems, residual {worst_res:.1e}, round trip {worst_trip:.1e}"
    ))
}

fn sample(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> (DVector<f64>, f64) {
    let xi = DVector::from_fn(spec.n(), |i, _| {
        rng.random_range(spec.iterate_lower[i]..=spec.iterate_upper[i])
    });
    let (tl, th) = (spec.theta_box.lower(), spec.theta_box.upper());
    let theta = DVector::from_fn(spec.d(), |i, _| rng.random_range(tl[i]..=th[i]));
    (
        spec.state(&xi, &theta),
        rng.random_range(spec.steps.lower()..=spec.steps.upper()),
    )
}

/// `(worst |r_i| / (μ_i ‖Δ‖²), worst relative Jacobian error)` over `10⁴` pairs.
fn linearization_case(spec: &ProblemSpec, seed: u64) -> Result<(f64, f64), String> {
    let mu = curvature_bounds(spec, &InputBox::from_spec(spec))
        .map_err(|e| e.to_string())?
        .mu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.n() + spec.d();
    let nominals = if spec.n() > 8 { 20 } else { 100 };
    let (mut ratio, mut fd_err) = (0.0f64, 0.0f64);
    for _ in 0..nominals {
        let (zh, ah) = sample(spec, &mut rng);
        let jac = jacobians(spec, &zh, ah).map_err(|e| e.to_string())?;
        let fh = spec.augmented(&zh, ah).map_err(|e| e.to_string())?;
        for _ in 0..10_000 / nominals {
            let (z, a) = sample(spec, &mut rng);
            let f = spec.augmented(&z, a).map_err(|e| e.to_string())?;
            let r = f - &fh - &jac.a * (&z - &zh) - jac.b.column(0) * (a - ah);
            let dd = (&z - &zh).amax().max((a - ah).abs());
            for i in 0..s {
                let bound = mu[i] * dd * dd;
                if r[i].abs() > 1e-12 {
                    ratio = ratio.max(r[i].abs() / bound);
                }
            }
        }
        let h = 1e-5;
        for c in 0..=s {
            let (plus, minus) = if c < s {
                let (mut zp, mut zm) = (zh.clone(), zh.clone());
                zp[c] += h;
                zm[c] -= h;
                (spec.augmented(&zp, ah), spec.augmented(&zm, ah))
            } else {
                (spec.augmented(&zh, ah + h), spec.augmented(&zh, ah - h))
            };
            let fd =
                (plus.map_err(|e| e.to_string())? - minus.map_err(|e| e.to_string())?) / (2.0 * h);
            for r in 0..s {
                let exact = if c < s { jac.a[(r, c)] } else { jac.b[(r, 0)] };
                fd_err = fd_err.max((fd[r] - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    Ok((ratio, fd_err))
}

fn criterion_6() -> Outcome {
    let c = experiments::constrained_quadratic(0.0);
    let relaxed = ProblemSpec::new(
        c.objective.clone(),
        ConstraintSet::Free,
        c.theta_box.clone(),
        c.xi0.clone(),
        c.steps,
        c.horizon,
        c.iterate_lower.clone(),
        c.iterate_upper.clone(),
    )
    .map_err(|e| e.to_string())?;
    let cases = [
        ("scalar", experiments::scalar_quadratic()),
        ("lqr", experiments::lqr_double_integrator()),
        ("constrained (pre-projection)", relaxed),
    ];
    let mut parts = Vec::new();
    for (i, (name, spec)) in cases.iter().enumerate() {
        let (ratio, fd) = linearization_case(spec, 60 + i as u64)?;
        check(
            ratio <= 1.0,
            format!("{name}: residual reaches {ratio} x bound"),
        )?;
        check(fd <= 1e-6, format!("{name}: Jacobian error {fd:e}"))?;
        parts.push(format!("{name} {ratio:.2}/{fd:.0e}"));
    }
    Ok(format!(
        "worst residual/bound and FD error: {}",
        parts.join(", ")
    ))
}

/// Recomputes the tube recursion from serialized data alone.
fn recheck_certificate(cert: &Value) -> Result<f64, String> {
    let tau = nums(&cert["tau"])?;
    let d = num(&cert["constants"]["initial_bound"]["value"])?;
    let model = &cert["disturbance_model"];
    let s_c = nums(&model["constant"])?;
    let mu = nums(&model["quadratic"])?;
    let e: Vec<Vec<f64>> = model["linear"]
        .as_array()
        .ok_or("linear")?
        .iter()
        .map(nums)
        .collect::<Result<_, _>>()?;
    let nb = tau.len();
    let mut worst = f64::NEG_INFINITY;
    match cert["response"]["serialization"].as_str() {
        Some("blocks") => {
            let mut blocks = BTreeMap::new();
            for b in cert["response"]["blocks"].as_array().ok_or("blocks")? {
                let k = b["k"].as_u64().ok_or("k")? as usize;
                let j = b["j"].as_u64().ok_or("j")? as usize;
                let mut m = matrix(&b["zeta_d"])?;
                m.extend(matrix(&b["alpha_d"])?);
                blocks.insert((k, j), m);
            }
            for k in 0..nb {
                let m0 = blocks.get(&(k, 0)).ok_or("missing block")?;
                let mut rhs = m0
                    .iter()
                    .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                    .fold(0.0, f64::max)
                    * d;
                for j in 1..=k {
                    let m = blocks.get(&(k, j)).ok_or("missing block")?;
                    let t = tau[j - 1];
                    rhs += m
                        .iter()
                        .map(|row| {
                            row.iter()
                                .enumerate()
                                .map(|(c, x)| x.abs() * (s_c[c] + e[j - 1][c] * t + mu[c] * t * t))
                                .sum::<f64>()
                        })
                        .fold(0.0, f64::max);
                }
                worst = worst.max(rhs - tau[k]);
            }
        }
        Some("norms") => {
            let coeffs = &cert["coefficients"];
            let initial = nums(&coeffs["initial"])?;
            let terms = coeffs["terms"].as_array().ok_or("terms")?;
            for k in 0..nb {
                let mut rhs = initial[k] * d;
                for (j, rows) in terms[k].as_array().ok_or("terms row")?.iter().enumerate() {
                    let t = tau[j];
                    let mut best = 0.0f64;
                    for r in rows.as_array().ok_or("rows")? {
                        let c = nums(r)?;
                        best = best.max(c[0] + c[1] * t + c[2] * t * t);
                    }
                    rhs += best;
                }
                worst = worst.max(rhs - tau[k]);
            }
        }
        other => return Err(format!("unknown serialization {other:?}")),
    }
    Ok(worst)
}

fn criterion_7(root: &Path) -> Outcome {
    let mut parts = Vec::new();
    for name in EXPERIMENTS {
        let cert = load_json(&root.join(name).join("certificate.json"))?;
        let slack = recheck_certificate(&cert)?;
        check(
            slack <= 0.0,
            format!("{name}: RHS exceeds tau by {slack:e}"),
        )?;
        parts.push(format!(
            "{name} {} {slack:.1e}",
            cert["response"]["serialization"].as_str().unwrap_or("?")
        ));
    }
    Ok(format!("max RHS - tau: {}", parts.join(", ")))
}

fn criterion_8(root: &Path) -> Outcome {
    let mut files = 0;
    for name in EXPERIMENTS {
        let a = root.join(name);
        let b = root.join(format!("{name}_repeat"));
        run_all(name, &b)?;
        for f in [
            "tube.csv",
            "certificate.json",
            "oracle.csv",
            "containment.json",
            "figure_data.csv",
        ] {
            let x = fs::read(a.join(f)).map_err(|e| format!("{name}/{f}: {e}"))?;
            let y = fs::read(b.join(f)).map_err(|e| format!("{name}_repeat/{f}: {e}"))?;
            check(x == y, format!("{name}/{f} differs between runs"))?;
            files += 1;
        }
    }
    Ok(format!("{files} artifacts byte-identical across two runs"))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let root = tempfile::Builder::new()
        .prefix("acceptance-")
        .tempdir_in(env!("CARGO_TARGET_TMPDIR"))
        .expect("scratch directory");
    let root = root.path();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "contraction rates", criterion_1()),
        (2, "scalar quadratic end to end", criterion_2(root)),
        (3, "LQR end to end", criterion_3(root)),
        (4, "constrained quadratic end to end", criterion_4(root)),
        (5, "SLS algebra", criterion_5()),
        (6, "linearization soundness", criterion_6()),
        (7, "fixed-point recheck", criterion_7(root)),
        (8, "determinism", criterion_8(root)),
    ];
    let mut failed = 0;
    for (i, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {i} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {i} FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
