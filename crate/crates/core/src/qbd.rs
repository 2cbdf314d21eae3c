//! Stationary distribution of the level-dependent QBD by backward
//! matrix-continued-fraction (R-matrix) recursion.
//!
//! For a truncation level `J` the ladder is seeded with `R_{J+1} = 0` and
//! unwound as `R_j = A (−(B_j + R_{j+1} C_{j+1}))⁻¹`; `π_0` is the left null
//! vector of `B_0 + R_1 C_1` and `π_j = π_{j−1} R_j`. The truncation level is
//! doubled until two successive distributions agree.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::left_null_vector;
use crate::model::{ModelParams, QbdBlocks, Verdict};

/// Entries above this (negative) value are treated as rounding noise.
pub const CLAMP_TOL: f64 = 1e-14;

/// Distance of `z_r` to 1 below which a slow-mixing warning is attached.
pub const NEAR_CRITICAL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Initial truncation level.
    pub j0: usize,
    pub j_max: usize,
    /// Sup-norm change between successive truncations.
    pub eps: f64,
    /// Mass allowed on the last retained level.
    pub tail_eps: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            j0: 64,
            j_max: 1 << 20,
            eps: 1e-12,
            tail_eps: 1e-12,
        }
    }
}

/// `R_1, …, R_J` with `π_j = π_{j−1} R_j`; `r[0]` holds `R_1`.
#[derive(Debug, Clone)]
pub struct RLadder {
    pub r: Vec<DMatrix<f64>>,
}

impl RLadder {
    pub fn get(&self, j: usize) -> &DMatrix<f64> {
        &self.r[j - 1]
    }

    pub fn depth(&self) -> usize {
        self.r.len()
    }
}

/// Truncated stationary distribution `π_0, …, π_J`.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryDistribution {
    /// `levels[j][i] = π_{i,j}`.
    pub levels: Vec<Vec<f64>>,
    /// Total mass before normalization, with `π_0` scaled to unit sum.
    pub captured_mass: f64,
    /// Largest balance violation over levels `0..J`.
    pub residual: f64,
    /// Balance violation of the truncation level `J` itself.
    pub boundary_residual: f64,
    pub normalized: bool,
    /// Negative entries set to zero, and the most negative value seen.
    pub clamped: usize,
    pub min_entry: f64,
    pub warnings: Vec<String>,
    /// Dominant singularity of the generating function when known.
    pub z_r: Option<f64>,
}

impl StationaryDistribution {
    /// Truncation level `J`.
    pub fn truncation(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn phases(&self) -> usize {
        self.levels[0].len()
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.levels.get(j).map_or(0.0, |l| l[i])
    }

    pub fn level_mass(&self, j: usize) -> f64 {
        self.levels.get(j).map_or(0.0, |l| l.iter().sum())
    }

    pub fn total(&self) -> f64 {
        self.levels.iter().flatten().sum()
    }

    /// Phase marginals `p_i(1)`.
    pub fn marginals(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.phases()];
        for l in &self.levels {
            for (acc, x) in m.iter_mut().zip(l) {
                *acc += x;
            }
        }
        m
    }

    /// Mean orbit size `Σ_j j·π_j 1`.
    pub fn mean_orbit(&self) -> f64 {
        self.levels
            .iter()
            .enumerate()
            .map(|(j, l)| j as f64 * l.iter().sum::<f64>())
            .sum()
    }

    /// Probability that all servers are busy.
    pub fn blocking_probability(&self) -> f64 {
        let s = self.phases() - 1;
        self.levels.iter().map(|l| l[s]).sum()
    }

    fn row(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.levels[j])
    }
}

fn check_ergodic(blocks: &QbdBlocks) -> Result<()> {
    if blocks.flagged_not_ergodic {
        Err(Error::NotErgodic("model flagged not ergodic".into()))
    } else {
        Ok(())
    }
}

fn ladder_unchecked(blocks: &QbdBlocks, depth: usize) -> Result<RLadder> {
    let n = blocks.n;
    let zero = DMatrix::zeros(n, n);
    let mut r = vec![zero.clone(); depth];
    if blocks.a.iter().all(|&x| x == 0.0) {
        return Ok(RLadder { r });
    }
    let mut next = zero;
    for j in (1..=depth).rev() {
        let mut m = blocks.b_at(j);
        if j < depth {
            m += &next * blocks.c_at(j + 1);
        }
        m.neg_mut();
        // R_j M = A  <=>  Mᵀ R_jᵀ = Aᵀ
        let rt = m
            .transpose()
            .lu()
            .solve(&blocks.a.transpose())
            .ok_or(Error::SingularBlock { level: j })?;
        let rj = rt.transpose();
        if rj.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularBlock { level: j });
        }
        next = rj.clone();
        r[j - 1] = rj;
    }
    Ok(RLadder { r })
}

/// R-matrix ladder for truncation level `depth`.
pub fn r_ladder(blocks: &QbdBlocks, depth: usize) -> Result<RLadder> {
    check_ergodic(blocks)?;
    ladder_unchecked(blocks, depth.max(1))
}

/// Normalized distribution at a fixed truncation level, without the
/// adaptive outer loop.
pub fn solve_fixed(blocks: &QbdBlocks, depth: usize) -> Result<StationaryDistribution> {
    check_ergodic(blocks)?;
    let depth = depth.max(1);
    let ladder = ladder_unchecked(blocks, depth)?;
    let m0 = blocks.b_at(0) + ladder.get(1) * blocks.c_at(1);
    let pi0 = left_null_vector(&m0).ok_or(Error::NoNullVector)?;

    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(depth + 1);
    rows.push(pi0);
    for j in 1..=depth {
        let next = ladder.get(j).tr_mul(&rows[j - 1]);
        rows.push(next);
    }

    let mut clamped = 0;
    let mut min_entry = f64::INFINITY;
    for row in rows.iter_mut() {
        for x in row.iter_mut() {
            min_entry = min_entry.min(*x);
            if *x < 0.0 {
                *x = 0.0;
                clamped += 1;
            }
        }
    }
    let captured_mass: f64 = rows.iter().map(|r| r.sum()).sum();
    if !(captured_mass > 0.0) || !captured_mass.is_finite() {
        return Err(Error::NoNullVector);
    }
    let levels: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|x| x / captured_mass).collect())
        .collect();
    let mut warnings = Vec::new();
    if min_entry < -CLAMP_TOL * captured_mass {
        warnings.push(format!("entry {min_entry:e} below clamp tolerance"));
    }
    let mut dist = StationaryDistribution {
        levels,
        captured_mass,
        residual: 0.0,
        boundary_residual: 0.0,
        normalized: true,
        clamped,
        min_entry,
        warnings,
        z_r: None,
    };
    let res = balance_residual(blocks, &dist);
    dist.residual = res.interior;
    dist.boundary_residual = res.boundary;
    Ok(dist)
}

/// Adaptive solve: the truncation level doubles from `opts.j0` until the
/// distribution is stable to `opts.eps` and the last level holds less than
/// `opts.tail_eps`.
pub fn solve(blocks: &QbdBlocks, opts: &SolverOptions) -> Result<StationaryDistribution> {
    check_ergodic(blocks)?;
    let mut depth = opts.j0.max(1);
    if depth > opts.j_max {
        return Err(Error::TruncationLimit { j_max: opts.j_max });
    }
    let mut prev = solve_fixed(blocks, depth)?;
    loop {
        let next_depth = depth * 2;
        if next_depth > opts.j_max {
            return Err(Error::TruncationLimit { j_max: opts.j_max });
        }
        let next = solve_fixed(blocks, next_depth)?;
        let change = (0..=next_depth)
            .flat_map(|j| (0..blocks.n).map(move |i| (i, j)))
            .map(|(i, j)| (next.prob(i, j) - prev.prob(i, j)).abs())
            .fold(0.0, f64::max);
        if change < opts.eps && next.level_mass(next_depth) < opts.tail_eps {
            return Ok(next);
        }
        prev = next;
        depth = next_depth;
    }
}

/// Validates the model, rejects non-ergodic ones and solves.
pub fn solve_model(params: &ModelParams, opts: &SolverOptions) -> Result<StationaryDistribution> {
    params.ensure_valid()?;
    let verdict = params.ergodicity()?;
    if verdict.verdict == Verdict::NotErgodic {
        return Err(Error::NotErgodic(verdict.reason));
    }
    let blocks = QbdBlocks::build(params)?;
    let mut dist = solve(&blocks, opts)?;
    if let Ok(d) = params.derive() {
        if params.ab == 0.0 {
            dist.z_r = Some(d.z_r);
            if d.z_r - 1.0 < NEAR_CRITICAL {
                dist.warnings.push(format!(
                    "slow-mixing: z_r - 1 = {:e}, truncation grows like 1/(z_r - 1)",
                    d.z_r - 1.0
                ));
            }
        }
    }
    Ok(dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceResidual {
    /// Sup norm of the balance rows for levels `0..J`.
    pub interior: f64,
    /// Sup norm of the level-`J` row, which the truncation perturbs.
    pub boundary: f64,
}

/// Sup norm of `π_{j−1} A + π_j B_j + π_{j+1} C_{j+1}` per level.
pub fn balance_residual(blocks: &QbdBlocks, dist: &StationaryDistribution) -> BalanceResidual {
    let depth = dist.truncation();
    let n = blocks.n;
    let mut interior: f64 = 0.0;
    let mut boundary: f64 = 0.0;
    for j in 0..=depth {
        let mut row = blocks.b_at(j).tr_mul(&dist.row(j));
        if j > 0 {
            row += blocks.a.tr_mul(&dist.row(j - 1));
        }
        if j < depth {
            row += blocks.c_at(j + 1).tr_mul(&dist.row(j + 1));
        }
        let norm = (0..n).map(|i| row[i].abs()).fold(0.0, f64::max);
        if j < depth {
            interior = interior.max(norm);
        } else {
            boundary = norm;
        }
    }
    BalanceResidual { interior, boundary }
}
