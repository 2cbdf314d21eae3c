//! `check`: cross-checks between the balance solution and the
//! generating-function systems.

use std::path::Path;

use nalgebra::DMatrix;
use retrialq::genfun::{bivariate_residual, build_system, det_v, ode_residual_grid, Variant};
use retrialq::reduction::{okubo_form, reduce_persistent, resolvent_decomposition, standardize};
use retrialq::{solve_model, ModelParams, SolverOptions, StationaryDistribution};
use serde::Serialize;
use serde_json::json;

use crate::manifest::Run;
use crate::params;
use crate::{print_json, CliError};

const DET_TOL: f64 = 1e-10;
const ODE_TOL: f64 = 1e-8;
const OKUBO_TOL: f64 = 1e-10;
/// Diagonal shift added to `V(z)` by `--corrupt`.
const CORRUPTION: f64 = 1e-3;

#[derive(Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    status: Status,
    value: Option<f64>,
    tolerance: Option<f64>,
    reason: Option<String>,
}

fn measured(name: &str, value: f64, tolerance: f64) -> Check {
    Check {
        name: name.into(),
        status: if value <= tolerance { Status::Pass } else { Status::Fail },
        value: Some(value),
        tolerance: Some(tolerance),
        reason: None,
    }
}

fn skipped(name: &str, reason: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        status: Status::Skipped,
        value: None,
        tolerance: None,
        reason: Some(reason.into()),
    }
}

fn from_result(name: &str, r: Result<f64, retrialq::Error>, tolerance: f64) -> Check {
    match r {
        Ok(v) => measured(name, v, tolerance),
        Err(e) => skipped(name, format!("skipped ({})", e.code())),
    }
}

/// Sample points kept clear of the determinant roots `p̄`, 1 and `z_r`.
fn det_points(m: &ModelParams) -> Vec<f64> {
    let z_r = m.derive().map_or(f64::NAN, |d| d.z_r);
    [-0.7, -0.3, 0.2, 0.45, 0.8, 1.3, 2.1, 3.4]
        .into_iter()
        .filter(|&z: &f64| [m.pb, 1.0, z_r].iter().all(|&r| r.is_nan() || (z - r).abs() >= 0.05))
        .collect()
}

fn det_check(m: &ModelParams, variant: Variant, corrupt: bool) -> Result<f64, retrialq::Error> {
    let sys = match variant {
        Variant::Reduced => reduce_persistent(m)?.system,
        v => build_system(m, v)?,
    };
    let mut worst = 0.0f64;
    for z in det_points(m) {
        let d = det_v(m, variant, z)?;
        let numeric = if corrupt {
            let v: DMatrix<f64> = sys.v_at(z);
            let n = v.nrows();
            (v + DMatrix::identity(n, n) * CORRUPTION).determinant()
        } else {
            d.numeric
        };
        let err = (numeric - d.formula).abs();
        worst = worst.max(if d.formula == 0.0 { err } else { err / d.formula.abs() });
    }
    Ok(worst)
}

fn ode_check(d: &StationaryDistribution, m: &ModelParams, v: Variant) -> Result<f64, retrialq::Error> {
    Ok(ode_residual_grid(d, m, v)?.into_iter().map(|x| x.1).fold(0.0, f64::max))
}

fn okubo_checks(m: &ModelParams, out: &mut Vec<Check>) {
    let names = ["okubo-power-identity", "okubo-spectrum", "okubo-jordan", "resolvent"];
    let ok = match okubo_form(m) {
        Ok(ok) => ok,
        Err(e) => {
            for n in names {
                out.push(skipped(n, format!("skipped ({})", e.code())));
            }
            return;
        }
    };
    let s = m.s;
    let power = standardize(&ok).map_or(0.0, |st| st.power_identity_defect());
    out.push(measured(names[0], ok.power_identity_defect().max(power), OKUBO_TOL));
    let e = ok.spectrum();
    let top = ok.pb + ok.rho_tilde;
    let spec = if s == 1 {
        (e[0].value - top).abs()
    } else {
        (e[0].value - ok.pb).abs().max((e[e.len() - 1].value - top).abs())
    };
    out.push(measured(names[1], spec, OKUBO_TOL));
    let jordan = s == 1 || (e.len() == 2 && e[0].jordan_sizes == vec![s - 1] && e[1].jordan_sizes == vec![1]);
    out.push(measured(names[2], if jordan { 0.0 } else { 1.0 }, 0.0));
    match resolvent_decomposition(&ok) {
        Ok(dec) => {
            let mut worst = 0.0f64;
            for y in [0.37, 1.9, 4.3, 7.1] {
                if (y - dec.rho_bar).abs() < 0.05 {
                    continue;
                }
                let shifted = DMatrix::identity(s, s) * y - &dec.t;
                let inv = shifted
                    .solve_upper_triangular(&DMatrix::identity(s, s))
                    .expect("y off the spectrum");
                let err = (dec.eval(y) - &dec.u * inv).amax() / dec.condition_scale(y);
                worst = worst.max(err);
            }
            out.push(measured(names[3], worst, OKUBO_TOL));
        }
        Err(e) => out.push(skipped(names[3], format!("skipped ({})", e.code()))),
    }
}

fn run_checks(m: &ModelParams, corrupt: bool) -> Vec<Check> {
    let mut out = Vec::new();
    let persistent = m.ab == 0.0;
    out.push(from_result("det-v-full", det_check(m, Variant::Full, corrupt), DET_TOL));
    out.push(from_result(
        "det-v-simplified",
        det_check(m, Variant::Simplified, corrupt),
        DET_TOL,
    ));
    if persistent {
        out.push(from_result(
            "det-v-reduced",
            det_check(m, Variant::Reduced, corrupt),
            DET_TOL,
        ));
    } else {
        out.push(skipped("det-v-reduced", "skipped (not persistent)"));
    }
    let dist = solve_model(
        m,
        &SolverOptions {
            tail_eps: 1e-16,
            ..Default::default()
        },
    );
    match &dist {
        Ok(d) => {
            out.push(from_result("ode-full", ode_check(d, m, Variant::Full), ODE_TOL));
            out.push(from_result(
                "ode-simplified",
                ode_check(d, m, Variant::Simplified),
                ODE_TOL,
            ));
            if persistent {
                out.push(from_result("ode-reduced", ode_check(d, m, Variant::Reduced), ODE_TOL));
            } else {
                out.push(skipped("ode-reduced", "skipped (not persistent)"));
            }
            out.push(from_result("bivariate", bivariate_residual(d, m, 0.5, 0.5), ODE_TOL));
        }
        Err(e) => {
            for n in ["ode-full", "ode-simplified", "ode-reduced", "bivariate"] {
                out.push(skipped(n, format!("skipped ({})", e.code())));
            }
        }
    }
    if persistent {
        okubo_checks(m, &mut out);
    } else {
        for n in ["okubo-power-identity", "okubo-spectrum", "okubo-jordan", "resolvent"] {
            out.push(skipped(n, "skipped (not persistent)"));
        }
    }
    out
}

pub fn cmd_check(paramfile: &Path, out: Option<&Path>, corrupt: bool) -> Result<(), CliError> {
    let m = params::load(paramfile)?.params;
    let checks = run_checks(&m, corrupt);
    let failed = checks.iter().filter(|c| matches!(c.status, Status::Fail)).count();
    let body = json!({
        "params": m,
        "corrupted": corrupt,
        "passed": checks.iter().filter(|c| matches!(c.status, Status::Pass)).count(),
        "failed": failed,
        "skipped": checks.iter().filter(|c| matches!(c.status, Status::Skipped)).count(),
        "checks": checks,
    });
    if let Some(dir) = out {
        let tolerances = json!({ "det": DET_TOL, "ode": ODE_TOL, "okubo": OKUBO_TOL });
        let mut run = Run::new(
            dir,
            "check",
            json!({ "params": m, "corrupt": corrupt }),
            vec![],
            tolerances,
        )?;
        run.write_json("check.json", "retrialq.check/1", body.clone())?;
        run.finish()?;
    }
    let mut doc = json!({ "schema": "retrialq.check/1" });
    doc.as_object_mut().unwrap().extend(body.as_object().unwrap().clone());
    print_json(&doc);
    if failed > 0 {
        Err(CliError::Failed(format!("{failed} check(s) failed")))
    } else {
        Ok(())
    }
}
