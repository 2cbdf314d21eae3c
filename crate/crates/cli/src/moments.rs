//! `moments`: factorial moments of a Markov-modulated M/M/∞ queue.

use std::path::Path;

use nalgebra::DMatrix;
use retrialq::genfun::mmoo_moments;
use serde::Deserialize;
use serde_json::json;

use crate::{print_json, CliError};

/// Phase file: arrival rates `a`, phase generator `b` and per-customer
/// service rates `c`, each a square row-major matrix.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseFile {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Invalid(format!(
            "matrix `{name}` must be square and non-empty"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn cmd_moments(phasefile: &Path, kmax: usize) -> Result<(), CliError> {
    let text = std::fs::read_to_string(phasefile)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", phasefile.display())))?;
    let f: PhaseFile = serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("phase file: {e}")))?;
    let (a, b, c) = (matrix("a", &f.a)?, matrix("b", &f.b)?, matrix("c", &f.c)?);
    let m = mmoo_moments(&a, &b, &c, kmax)?;
    let per_phase: Vec<Vec<f64>> = m.iter().map(|v| v.iter().copied().collect()).collect();
    let total: Vec<f64> = m.iter().map(|v| v.sum()).collect();
    print_json(&json!({
        "schema": "retrialq.moments/1",
        "kmax": kmax,
        "moments": total,
        "per_phase": per_phase,
    }));
    Ok(())
}
