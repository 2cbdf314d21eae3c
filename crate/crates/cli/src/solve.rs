//! `solve`, `tail` and `sweep`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use retrialq::qbd::balance_residual;
use retrialq::tail::{analytic_singularity, fit_tail};
use retrialq::{solve_model, ModelParams, QbdBlocks, SolverOptions, StationaryDistribution};
use serde_json::{json, Value};

use crate::manifest::{fmt17, Run};
use crate::params::{self, set_field};
use crate::{print_json, CliError, SolveFlags};

pub const SUMMARY_SCHEMA: &str = "retrialq.summary/1";

/// `i,j,probability` rows for every positive cell.
pub fn distribution_csv(run: &Run, dist: &StationaryDistribution) -> String {
    let mut out = run.csv_header_comment();
    out.push_str("i,j,probability\n");
    for (j, level) in dist.levels.iter().enumerate() {
        for (i, &x) in level.iter().enumerate() {
            if x > 0.0 {
                writeln!(out, "{i},{j},{}", fmt17(x)).unwrap();
            }
        }
    }
    out
}

pub fn summary(m: &ModelParams, dist: &StationaryDistribution) -> Result<Value, CliError> {
    let verdict = m.ergodicity()?;
    let res = balance_residual(&QbdBlocks::build(m)?, dist);
    Ok(json!({
        "params": m,
        "ergodicity": verdict,
        "xi": verdict.xi,
        "z_r": dist.z_r.or(verdict.z_r),
        "marginals": dist.marginals(),
        "mean_orbit_size": dist.mean_orbit(),
        "blocking_probability": dist.blocking_probability(),
        "residuals": { "interior": res.interior, "boundary": res.boundary },
        "truncation": dist.truncation(),
        "captured_mass": dist.captured_mass,
        "total_mass": dist.total(),
        "clamped_entries": dist.clamped,
        "warnings": dist.warnings,
    }))
}

fn tolerances(o: &SolverOptions) -> Value {
    json!({ "j_max": o.j_max, "eps": o.eps, "tail_eps": o.tail_eps })
}

pub fn cmd_solve(paramfile: &Path, flags: &SolveFlags, out: &Path) -> Result<(), CliError> {
    let file = params::load(paramfile)?;
    let m = file.params;
    let opts = flags.options();
    let dist = solve_model(&m, &opts)?;
    let mut run = Run::new(out, "solve", json!({ "params": m }), vec![], tolerances(&opts))?;
    let csv = distribution_csv(&run, &dist);
    run.write("distribution.csv", csv.as_bytes())?;
    let body = summary(&m, &dist)?;
    run.write_json("summary.json", SUMMARY_SCHEMA, body.clone())?;
    run.finish()?;
    print_json(&json!({
        "mean_orbit_size": body["mean_orbit_size"],
        "blocking_probability": body["blocking_probability"],
        "truncation": body["truncation"],
        "out": out,
    }));
    Ok(())
}

fn parse_window(w: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Invalid(format!("window must be lo:hi, got `{w}`"));
    let (lo, hi) = w.split_once(':').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn cmd_tail(paramfile: &Path, window: Option<&str>, tail_eps: f64) -> Result<(), CliError> {
    let m = params::load(paramfile)?.params;
    let window = window.map(parse_window).transpose()?;
    let opts = SolverOptions {
        tail_eps,
        ..Default::default()
    };
    let dist = solve_model(&m, &opts)?;
    let analytic = analytic_singularity(&m).ok();
    let fit = fit_tail(&dist, window)?;
    print_json(&json!({
        "schema": "retrialq.tail/1",
        "params": m,
        "truncation": dist.truncation(),
        "analytic": analytic,
        "gap": fit.gap(),
        "fit": fit,
    }));
    Ok(())
}

/// `key=lo:hi:n` on an evenly spaced grid.
fn parse_vary(spec: &str) -> Result<(String, Vec<f64>), CliError> {
    let bad = || CliError::Invalid(format!("--vary expects key=lo:hi:n, got `{spec}`"));
    let (key, range) = spec.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    let [lo, hi, n] = parts[..] else { return Err(bad()) };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let key = key.trim();
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if key != "rho" && !params::KEYS.contains(&key) {
        return Err(CliError::Invalid(format!("unknown sweep key `{key}`")));
    }
    let grid = (0..n)
        .map(|k| {
            if n == 1 {
                lo
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect();
    Ok((key.to_string(), grid))
}

/// Applies one grid value. `rho = λ_ob/(sμθ̄)` is linear in λ, so it is
/// reached by rescaling λ.
fn apply(base: &ModelParams, key: &str, value: f64) -> Result<ModelParams, CliError> {
    let mut m = *base;
    if key == "rho" {
        let mut unit = *base;
        unit.lambda = 1.0;
        let per_lambda = unit.lambda_ob() / (base.s as f64 * base.mu * base.thb);
        if !(per_lambda > 0.0 && per_lambda.is_finite()) {
            return Err(CliError::Core(retrialq::Error::UndefinedRho));
        }
        m.lambda = value / per_lambda;
    } else {
        set_field(&mut m, key, value)?;
    }
    m.ensure_valid()?;
    Ok(m)
}

struct Row {
    value: f64,
    outcome: Result<(StationaryDistribution, ModelParams), CliError>,
}

pub fn cmd_sweep(paramfile: &Path, vary: &str, jobs: usize, flags: &SolveFlags, out: &Path) -> Result<(), CliError> {
    let base = params::load(paramfile)?.params;
    let (key, grid) = parse_vary(vary)?;
    let opts = flags.options();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let rows: Vec<Row> = pool.install(|| {
        grid.par_iter()
            .map(|&value| Row {
                value,
                outcome: apply(&base, &key, value).and_then(|m| Ok((solve_model(&m, &opts)?, m))),
            })
            .collect()
    });
    let inputs = json!({ "params": base, "vary": { "key": key, "values": grid }, "jobs": jobs });
    let mut run = Run::new(out, "sweep", inputs, vec![], tolerances(&opts))?;
    let mut csv = run.csv_header_comment();
    csv.push_str("key,value,status,lambda,mean_orbit_size,blocking_probability,xi,z_r,truncation,residual,message\n");
    let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
    let mut failures = 0;
    for row in &rows {
        match &row.outcome {
            Ok((d, m)) => {
                let v = m.ergodicity().ok();
                writeln!(
                    csv,
                    "{key},{},ok,{},{},{},{},{},{},{},",
                    fmt17(row.value),
                    fmt17(m.lambda),
                    fmt17(d.mean_orbit()),
                    fmt17(d.blocking_probability()),
                    opt(v.as_ref().and_then(|v| v.xi)),
                    opt(d.z_r),
                    d.truncation(),
                    fmt17(d.residual),
                )
                .unwrap();
            }
            Err(e) => {
                failures += 1;
                let msg = e.to_string().replace(['"', '\n'], " ");
                writeln!(csv, "{key},{},{},,,,,,,,\"{msg}\"", fmt17(row.value), e.code()).unwrap();
            }
        }
    }
    run.write("sweep.csv", csv.as_bytes())?;
    run.finish()?;
    print_json(&json!({ "points": rows.len(), "failures": failures, "out": out }));
    Ok(())
}
