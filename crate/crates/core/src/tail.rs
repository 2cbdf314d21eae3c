//! Geometric tail of the orbit-size distribution.
//!
//! The fit model is `π_j ≈ C·j^β·η^j`, i.e. a linear least-squares fit of
//! `log π_j` on `(1, log j, j)`. For a persistent system the analytic decay
//! rate is `1/z_r`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::qbd::StationaryDistribution;

const MIN_WINDOW: usize = 10;
const UNDERFLOW: f64 = 1e-300;
const CRITICAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularityReport {
    pub z_r: f64,
    pub decay: f64,
    pub regime: Regime,
}

/// `z_r = p̄ + (1 + (θ̃/θ̄)p̄)/ρ`, classified against 1.
pub fn analytic_singularity(params: &ModelParams) -> Result<SingularityReport> {
    let z_r = params.derive()?.z_r;
    let regime = if (z_r - 1.0).abs() <= CRITICAL_TOL {
        Regime::Critical
    } else if z_r > 1.0 {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    };
    Ok(SingularityReport {
        z_r,
        decay: 1.0 / z_r,
        regime,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fit {
    pub eta: f64,
    pub beta: f64,
    pub log_c: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub window: (usize, usize),
    pub z_r: Option<f64>,
    /// Fit of the level masses `Σ_i π_{i,j}`.
    pub level: Fit,
    /// Fits of the individual phases, `None` where a phase underflows.
    pub phases: Vec<Option<Fit>>,
    /// `r_j = mass(j+1)/mass(j)` over the window.
    pub ratios: Vec<f64>,
    pub warnings: Vec<String>,
}

impl TailEstimate {
    /// `|η − 1/z_r|` when `z_r` is known.
    pub fn gap(&self) -> Option<f64> {
        self.z_r.map(|z| (self.level.eta - 1.0 / z).abs())
    }
}

/// Default window: the last third of the computed levels without the final
/// tenth.
pub fn default_window(depth: usize) -> (usize, usize) {
    (2 * depth / 3, depth * 9 / 10)
}

fn fit_series(lo: usize, values: &[f64]) -> Fit {
    let n = values.len();
    let mut x = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    for (k, v) in values.iter().enumerate() {
        let j = (lo + k) as f64;
        x[(k, 0)] = 1.0;
        x[(k, 1)] = j.ln();
        x[(k, 2)] = j;
        y[k] = v.ln();
    }
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .expect("SVD computed with both factors");
    let r = &x * &coef - &y;
    Fit {
        eta: coef[2].exp(),
        beta: coef[1],
        log_c: coef[0],
        residual: (r.norm_squared() / n as f64).sqrt(),
    }
}

pub fn fit_tail(dist: &StationaryDistribution, window: Option<(usize, usize)>) -> Result<TailEstimate> {
    let depth = dist.truncation();
    let (lo, hi) = window.unwrap_or_else(|| default_window(depth));
    let lo = lo.max(1);
    let width = (hi + 1).saturating_sub(lo);
    if hi > depth || width < MIN_WINDOW {
        return Err(Error::WindowTooSmall {
            got: width.min(depth + 1),
            min: MIN_WINDOW,
        });
    }
    let mass: Vec<f64> = (lo..=hi).map(|j| dist.level_mass(j)).collect();
    if let Some(k) = mass.iter().position(|&m| !(m >= UNDERFLOW)) {
        return Err(Error::TailUnderflow(lo + k));
    }
    let mut warnings = Vec::new();
    if depth < 4 * (hi - lo) {
        warnings.push(format!("truncation {depth} below four window widths"));
    }
    let phases = (0..dist.phases())
        .map(|i| {
            let v: Vec<f64> = (lo..=hi).map(|j| dist.prob(i, j)).collect();
            v.iter().all(|&x| x >= UNDERFLOW).then(|| fit_series(lo, &v))
        })
        .collect();
    let ratios = (lo..hi).map(|j| dist.level_mass(j + 1) / dist.level_mass(j)).collect();
    Ok(TailEstimate {
        window: (lo, hi),
        z_r: dist.z_r,
        level: fit_series(lo, &mass),
        phases,
        ratios,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::s1_classic_pmf_table;

    fn dist_from(levels: Vec<Vec<f64>>, z_r: Option<f64>) -> StationaryDistribution {
        StationaryDistribution {
            levels,
            captured_mass: 1.0,
            residual: 0.0,
            boundary_residual: 0.0,
            normalized: true,
            clamped: 0,
            min_entry: 0.0,
            warnings: vec![],
            z_r,
        }
    }

    #[test]
    fn singularity_examples() {
        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let r = analytic_singularity(&m).unwrap();
        assert!((r.z_r - 2.0).abs() < 1e-15 && r.regime == Regime::Subcritical);
        let mut m = ModelParams::classic(1.0, 1.0, 1.0, 1);
        m.p = 0.5;
        m.pb = 0.5;
        assert!((analytic_singularity(&m).unwrap().z_r - 1.5).abs() < 1e-15);
        m.lambda = 1e9;
        let r = analytic_singularity(&m).unwrap();
        assert!(r.z_r <= 1.0 && r.regime == Regime::Supercritical);
        m.lambda = 0.0;
        assert_eq!(analytic_singularity(&m).unwrap_err().code(), "undefined-rho");
    }

    #[test]
    fn classic_fit() {
        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let t = s1_classic_pmf_table(&m, 1200).unwrap();
        let d = dist_from(t.iter().map(|&(a, b)| vec![a, b]).collect(), Some(2.0));
        let est = fit_tail(&d, Some((100, 400))).unwrap();
        assert!(est.gap().unwrap() < 1e-3);
        let phase0 = est.phases[0].unwrap();
        assert!((phase0.eta - 0.5).abs() < 1e-3);
        assert!((phase0.beta - (0.5 - 1.0)).abs() < 0.05);
        assert!((est.level.beta - 0.5).abs() < 0.05);
        assert_eq!(est.ratios.len(), 300);
    }

    #[test]
    fn window_errors() {
        let d = dist_from(vec![vec![0.5]; 20], None);
        assert_eq!(fit_tail(&d, Some((5, 8))).unwrap_err().code(), "window-too-small");
        let mut levels: Vec<Vec<f64>> = (0..50).map(|j| vec![0.5f64.powi(j)]).collect();
        levels[30][0] = 0.0;
        let d = dist_from(levels, None);
        assert_eq!(fit_tail(&d, Some((20, 40))).unwrap_err().code(), "tail-underflow");
    }
}
