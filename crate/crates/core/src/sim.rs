//! Discrete-event simulation of the retrial model.
//!
//! The chain is simulated with competing exponential clocks: from `(i, j)`
//! the next event occurs after an `Exp(λ + iμ + jν)` holding time and is an
//! arrival, a service completion or an orbit attempt in proportion to the
//! three rates. Branches that leave the state unchanged (balking, repeated
//! service, a blocked retrial that stays in orbit) are null events that
//! still consume the clock.
//!
//! Random numbers come from xoshiro256++ seeded through SplitMix64. Each
//! event draws two uniforms `u = (x >> 11)·2⁻⁵³` from consecutive outputs:
//! the first gives the holding time `−ln(1 − u)/R`, the second picks the
//! event and its branch by inverting the cumulative branch rates.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::qbd::StationaryDistribution;

/// Fraction of simulated time above the occupancy cap that is tolerated.
pub const CAP_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    Events(u64),
    Time(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub horizon: Horizon,
    pub seed: u64,
    pub warmup: f64,
    pub batches: usize,
    /// Largest orbit size with its own occupancy cell.
    pub j_cap: usize,
}

impl SimConfig {
    pub fn new(params: ModelParams, events: u64, seed: u64) -> Self {
        SimConfig {
            params,
            horizon: Horizon::Events(events),
            seed,
            warmup: 0.1,
            batches: 20,
            j_cap: 400,
        }
    }

    fn check(&self) -> Result<()> {
        self.params.ensure_valid()?;
        if self.batches < 10 {
            return Err(Error::InvalidParams(format!("batch count {} below 10", self.batches)));
        }
        if !(0.0..=0.5).contains(&self.warmup) {
            return Err(Error::InvalidParams(format!(
                "warmup fraction {} outside [0, 0.5]",
                self.warmup
            )));
        }
        let ok = match self.horizon {
            Horizon::Events(n) => n as f64 * (1.0 - self.warmup) >= self.batches as f64,
            Horizon::Time(t) => t > 0.0 && t.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidParams("horizon too short for the batch count".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub arrival_accept: u64,
    /// Arrivals finding a free server and joining the orbit.
    pub arrival_orbit: u64,
    /// Arrivals finding all servers busy and joining the orbit.
    pub arrival_blocked_orbit: u64,
    pub arrival_balk: u64,
    pub arrival_lost: u64,
    pub service_repeat: u64,
    pub service_depart: u64,
    pub service_orbit: u64,
    pub retrial_success: u64,
    /// Orbit customers leaving although a server is free.
    pub retrial_leave: u64,
    pub retrial_abandon: u64,
    pub retrial_stay: u64,
}

impl EventCounts {
    pub fn orbit_joins(&self) -> u64 {
        self.arrival_orbit + self.arrival_blocked_orbit + self.service_orbit
    }

    pub fn orbit_departures(&self) -> u64 {
        self.retrial_success + self.retrial_leave + self.retrial_abandon
    }

    pub fn total(&self) -> u64 {
        self.arrival_accept
            + self.arrival_orbit
            + self.arrival_blocked_orbit
            + self.arrival_balk
            + self.arrival_lost
            + self.service_repeat
            + self.service_depart
            + self.service_orbit
            + self.retrial_success
            + self.retrial_leave
            + self.retrial_abandon
            + self.retrial_stay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub s: usize,
    pub j_cap: usize,
    /// `estimate[j][i]`, time-average occupancy of `(i, j)`.
    pub estimate: Vec<Vec<f64>>,
    /// Batch-means 95% half-widths, same layout.
    pub half_width: Vec<Vec<f64>>,
    /// Events of the whole run, warmup included.
    pub counts: EventCounts,
    pub events: u64,
    /// Simulated time after warmup.
    pub sim_time: f64,
    /// Fraction of post-warmup time with `j > j_cap`.
    pub cap_fraction: f64,
    /// Entries into `j > j_cap`.
    pub cap_hits: u64,
    pub start: (usize, usize),
    pub end: (usize, usize),
    pub batches: usize,
}

impl SimResult {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.estimate.get(j).map_or(0.0, |l| l[i])
    }

    pub fn total(&self) -> f64 {
        self.estimate.iter().flatten().sum()
    }

    /// CSV rows `i,j,estimate,half_width` for cells with positive estimate.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,estimate,half_width")?;
        for (j, (est, hw)) in self.estimate.iter().zip(&self.half_width).enumerate() {
            for i in 0..=self.s {
                if est[i] > 0.0 || hw[i] > 0.0 {
                    writeln!(w, "{i},{j},{:.16e},{:.16e}", est[i], hw[i])?;
                }
            }
        }
        Ok(())
    }
}

struct Stream(Xoshiro256PlusPlus);

impl Stream {
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Two-sided 95% Student quantile for `b − 1` degrees of freedom.
pub fn t_quantile(batches: usize) -> f64 {
    StudentsT::new(0.0, 1.0, (batches - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

struct Accumulator {
    width: usize,
    j_cap: usize,
    /// One occupancy vector per batch, plus the overflow time per batch.
    cells: Vec<Vec<f64>>,
    overflow: Vec<f64>,
    duration: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, batch: usize, i: usize, j: usize, dt: f64) {
        self.duration[batch] += dt;
        if j > self.j_cap {
            self.overflow[batch] += dt;
        } else {
            self.cells[batch][j * self.width + i] += dt;
        }
    }
}

pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    config.check()?;
    let m = &config.params;
    let s = m.s;
    let width = s + 1;
    let b = config.batches;
    let mut acc = Accumulator {
        width,
        j_cap: config.j_cap,
        cells: vec![vec![0.0; width * (config.j_cap + 1)]; b],
        overflow: vec![0.0; b],
        duration: vec![0.0; b],
    };
    let mut rng = Stream(Xoshiro256PlusPlus::seed_from_u64(config.seed));
    let mut counts = EventCounts::default();
    let (mut i, mut j) = (0usize, 0usize);
    let mut cap_hits = 0;
    let mut t = 0.0;
    let mut events = 0u64;

    let (warm_events, batch_events, total_events) = match config.horizon {
        Horizon::Events(n) => {
            let w = (n as f64 * config.warmup).floor() as u64;
            (w, ((n - w) / b as u64).max(1), n)
        }
        Horizon::Time(_) => (0, 0, u64::MAX),
    };
    let (warm_time, batch_time, end_time) = match config.horizon {
        Horizon::Time(h) => (h * config.warmup, h * (1.0 - config.warmup) / b as f64, h),
        Horizon::Events(_) => (0.0, 0.0, f64::INFINITY),
    };

    let mut absorbed = false;
    while events < total_events && t < end_time {
        let rate = m.lambda + i as f64 * m.mu + j as f64 * m.nu;
        let dt = if rate > 0.0 {
            -(1.0 - rng.uniform()).ln() / rate
        } else if let Horizon::Time(_) = config.horizon {
            end_time - t
        } else {
            absorbed = true;
            break;
        };
        match config.horizon {
            Horizon::Events(_) => {
                if events >= warm_events {
                    let batch = (((events - warm_events) / batch_events) as usize).min(b - 1);
                    acc.add(batch, i, j, dt);
                }
            }
            Horizon::Time(_) => {
                // split the sojourn over batch boundaries
                let mut from = t.max(warm_time);
                let to = (t + dt).min(end_time);
                while from < to {
                    let batch = (((from - warm_time) / batch_time) as usize).min(b - 1);
                    let edge = if batch == b - 1 {
                        to
                    } else {
                        (warm_time + (batch + 1) as f64 * batch_time).min(to)
                    };
                    acc.add(batch, i, j, edge - from);
                    from = edge;
                }
            }
        }
        t += dt;
        if t >= end_time {
            break;
        }
        events += 1;

        let v = rng.uniform() * rate;
        let was_capped = j > config.j_cap;
        if v < m.lambda {
            let w = v / m.lambda;
            if i < s {
                if w < m.p_a {
                    i += 1;
                    counts.arrival_accept += 1;
                } else if w < m.p_a + m.pt_a {
                    j += 1;
                    counts.arrival_orbit += 1;
                } else {
                    counts.arrival_balk += 1;
                }
            } else if w < m.at_0 {
                j += 1;
                counts.arrival_blocked_orbit += 1;
            } else {
                counts.arrival_lost += 1;
            }
        } else if v < m.lambda + i as f64 * m.mu {
            let w = (v - m.lambda) / (i as f64 * m.mu);
            if w < m.thb {
                i -= 1;
                counts.service_depart += 1;
            } else if w < m.thb + m.tht {
                i -= 1;
                j += 1;
                counts.service_orbit += 1;
            } else {
                counts.service_repeat += 1;
            }
        } else {
            let w = (v - m.lambda - i as f64 * m.mu) / (j as f64 * m.nu);
            if i < s {
                if w < m.p {
                    i += 1;
                    j -= 1;
                    counts.retrial_success += 1;
                } else {
                    j -= 1;
                    counts.retrial_leave += 1;
                }
            } else if w < m.ab {
                j -= 1;
                counts.retrial_abandon += 1;
            } else {
                counts.retrial_stay += 1;
            }
        }
        if !was_capped && j > config.j_cap {
            cap_hits += 1;
        }
    }

    let mut estimate = vec![vec![0.0; width]; config.j_cap + 1];
    let mut half_width = vec![vec![0.0; width]; config.j_cap + 1];
    if absorbed {
        // An absorbing state holds all long-run mass.
        if j <= config.j_cap {
            estimate[j][i] = 1.0;
        }
        estimate.truncate(j.min(config.j_cap) + 1);
        half_width.truncate(estimate.len());
        return Ok(SimResult {
            s,
            j_cap: config.j_cap,
            estimate,
            half_width,
            counts,
            events,
            sim_time: acc.duration.iter().sum(),
            cap_fraction: if j > config.j_cap { 1.0 } else { 0.0 },
            cap_hits,
            start: (0, 0),
            end: (i, j),
            batches: b,
        });
    }
    let sim_time: f64 = acc.duration.iter().sum();
    let overflow: f64 = acc.overflow.iter().sum();
    let cap_fraction = overflow / sim_time;
    if cap_fraction > CAP_TOLERANCE {
        return Err(Error::CapExceeded { fraction: cap_fraction });
    }

    let tq = t_quantile(b);
    let bf = b as f64;
    for jj in 0..=config.j_cap {
        for ii in 0..width {
            let k = jj * width + ii;
            let total: f64 = acc.cells.iter().map(|c| c[k]).sum();
            if total == 0.0 {
                continue;
            }
            estimate[jj][ii] = total / sim_time;
            let fr: Vec<f64> = acc
                .cells
                .iter()
                .zip(&acc.duration)
                .map(|(c, d)| if *d > 0.0 { c[k] / d } else { 0.0 })
                .collect();
            let mean = fr.iter().sum::<f64>() / bf;
            let var = fr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (bf - 1.0);
            half_width[jj][ii] = tq * (var / bf).sqrt();
        }
    }
    // Trim trailing empty levels.
    while estimate.len() > 1 && estimate.last().unwrap().iter().all(|&x| x == 0.0) {
        estimate.pop();
        half_width.pop();
    }
    Ok(SimResult {
        s,
        j_cap: config.j_cap,
        estimate,
        half_width,
        counts,
        events,
        sim_time,
        cap_fraction,
        cap_hits,
        start: (0, 0),
        end: (i, j),
        batches: b,
    })
}

/// Inverse-variance weighted merge of independent replications. Cells
/// with a zero half-width in any replication fall back to equal weights.
pub fn merge(results: &[SimResult]) -> Result<SimResult> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidParams("no replications to merge".into()))?;
    if results.iter().any(|r| r.s != first.s) {
        return Err(Error::InvalidParams("replications of different models".into()));
    }
    let levels = results.iter().map(|r| r.estimate.len()).max().unwrap();
    let width = first.s + 1;
    let mut estimate = vec![vec![0.0; width]; levels];
    let mut half_width = vec![vec![0.0; width]; levels];
    let at = |r: &SimResult, i: usize, j: usize| (r.get(i, j), r.half_width.get(j).map_or(0.0, |l| l[i]));
    for j in 0..levels {
        for i in 0..width {
            let cells: Vec<(f64, f64)> = results.iter().map(|r| at(r, i, j)).collect();
            if cells.iter().all(|&(_, h)| h > 0.0) {
                let w: Vec<f64> = cells.iter().map(|&(_, h)| 1.0 / (h * h)).collect();
                let sw: f64 = w.iter().sum();
                estimate[j][i] = cells.iter().zip(&w).map(|(c, w)| c.0 * w).sum::<f64>() / sw;
                half_width[j][i] = 1.0 / sw.sqrt();
            } else {
                let n = cells.len() as f64;
                estimate[j][i] = cells.iter().map(|c| c.0).sum::<f64>() / n;
                half_width[j][i] = cells.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt() / n;
            }
        }
    }
    let mut counts = EventCounts::default();
    for r in results {
        let c = &r.counts;
        counts.arrival_accept += c.arrival_accept;
        counts.arrival_orbit += c.arrival_orbit;
        counts.arrival_blocked_orbit += c.arrival_blocked_orbit;
        counts.arrival_balk += c.arrival_balk;
        counts.arrival_lost += c.arrival_lost;
        counts.service_repeat += c.service_repeat;
        counts.service_depart += c.service_depart;
        counts.service_orbit += c.service_orbit;
        counts.retrial_success += c.retrial_success;
        counts.retrial_leave += c.retrial_leave;
        counts.retrial_abandon += c.retrial_abandon;
        counts.retrial_stay += c.retrial_stay;
    }
    Ok(SimResult {
        s: first.s,
        j_cap: first.j_cap,
        estimate,
        half_width,
        counts,
        events: results.iter().map(|r| r.events).sum(),
        sim_time: results.iter().map(|r| r.sim_time).sum(),
        cap_fraction: results.iter().map(|r| r.cap_fraction).fold(0.0, f64::max),
        cap_hits: results.iter().map(|r| r.cap_hits).sum(),
        start: first.start,
        end: first.end,
        batches: first.batches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellComparison {
    pub i: usize,
    pub j: usize,
    pub simulated: f64,
    pub exact: f64,
    pub half_width: f64,
    /// `(simulated − exact)/standard error`, infinite for a zero-width
    /// mismatch.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub cells: Vec<CellComparison>,
    pub within: usize,
    pub fraction_within: f64,
    pub total_variation: f64,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Cells with mass above this threshold on either side are scored.
pub const CELL_MASS: f64 = 1e-6;

/// Per-cell z-scores and total variation on the common support; passes if
/// at least 95% of the scored cells lie within three half-widths.
pub fn compare(sim: &SimResult, dist: &StationaryDistribution) -> ComparisonReport {
    let tq = t_quantile(sim.batches.max(2));
    let levels = sim.estimate.len().max(dist.levels.len());
    let width = (sim.s + 1).min(dist.phases());
    let mut cells = Vec::new();
    let mut tv = 0.0;
    for j in 0..levels {
        for i in 0..width {
            let x = sim.get(i, j);
            let y = dist.prob(i, j);
            tv += (x - y).abs();
            if x.max(y) <= CELL_MASS {
                continue;
            }
            let hw = sim.half_width.get(j).map_or(0.0, |l| l[i]);
            let diff = x - y;
            let z = if hw > 0.0 {
                diff / (hw / tq)
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(diff)
            };
            cells.push(CellComparison {
                i,
                j,
                simulated: x,
                exact: y,
                half_width: hw,
                z,
            });
        }
    }
    let within = cells
        .iter()
        .filter(|c| (c.simulated - c.exact).abs() <= 3.0 * c.half_width)
        .count();
    let fraction_within = if cells.is_empty() {
        1.0
    } else {
        within as f64 / cells.len() as f64
    };
    ComparisonReport {
        max_abs_z: cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max),
        within,
        fraction_within,
        total_variation: tv / 2.0,
        pass: fraction_within >= 0.95,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qbd::{solve_model, SolverOptions};

    #[test]
    fn empty_system() {
        let m = ModelParams::classic(0.0, 1.0, 1.0, 2);
        let r = simulate(&SimConfig::new(m, 1000, 1)).unwrap();
        assert_eq!(r.get(0, 0), 1.0);
        assert_eq!(r.total(), 1.0);
        let d = solve_model(&m, &SolverOptions::default()).unwrap();
        assert_eq!(compare(&r, &d).total_variation, 0.0);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let a = simulate(&SimConfig::new(m, 20_000, 7)).unwrap();
        let b = simulate(&SimConfig::new(m, 20_000, 7)).unwrap();
        let c = simulate(&SimConfig::new(m, 20_000, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn orbit_flow_balance_is_exact() {
        let mut m = ModelParams::classic(0.9, 1.0, 0.8, 2);
        m.ab = 0.2;
        m.alpha = 0.8;
        m.tht = 0.1;
        m.thb = 0.9;
        let r = simulate(&SimConfig::new(m, 200_000, 3)).unwrap();
        let c = r.counts;
        assert_eq!(c.orbit_joins() as i64 - c.orbit_departures() as i64, r.end.1 as i64);
        assert_eq!(c.total(), r.events);
        assert!(c.retrial_stay > 0 && c.retrial_abandon > 0);
    }

    #[test]
    fn classic_idle_probability() {
        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let r = simulate(&SimConfig::new(m, 2_000_000, 11)).unwrap();
        let hw = r.half_width[0][0];
        assert!((r.get(0, 0) - 0.353_553_4).abs() < 3.0 * hw, "{} ± {hw}", r.get(0, 0));
        assert!((r.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_horizon() {
        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let mut cfg = SimConfig::new(m, 0, 5);
        cfg.horizon = Horizon::Time(50_000.0);
        let r = simulate(&cfg).unwrap();
        assert!((r.sim_time - 45_000.0).abs() < 1e-6);
        assert!((r.get(0, 0) - 0.353_553_4).abs() < 0.02);
    }

    #[test]
    fn config_checks_and_cap() {
        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let mut cfg = SimConfig::new(m, 1000, 1);
        cfg.batches = 5;
        assert_eq!(simulate(&cfg).unwrap_err().code(), "invalid-params");
        let mut cfg = SimConfig::new(ModelParams::classic(0.95, 1.0, 0.1, 1), 100_000, 1);
        cfg.j_cap = 2;
        assert_eq!(simulate(&cfg).unwrap_err().code(), "cap-exceeded");
    }

    #[test]
    fn mismatched_models_fail() {
        let a = ModelParams::classic(0.3, 1.0, 1.0, 1);
        let b = ModelParams::classic(0.6, 1.0, 1.0, 1);
        let sim = simulate(&SimConfig::new(b, 500_000, 2)).unwrap();
        let d = solve_model(&a, &SolverOptions::default()).unwrap();
        let rep = compare(&sim, &d);
        assert!(!rep.pass && rep.total_variation > 0.1);
    }

    #[test]
    fn merge_reduces_width() {
        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let r: Vec<SimResult> = (0..3)
            .map(|k| simulate(&SimConfig::new(m, 100_000, k)).unwrap())
            .collect();
        let merged = merge(&r).unwrap();
        assert!(merged.half_width[0][0] < r.iter().map(|x| x.half_width[0][0]).fold(f64::MAX, f64::min));
        assert_eq!(merged.events, 300_000);
    }

    #[test]
    fn csv_rows() {
        let m = ModelParams::classic(0.2, 1.0, 1.0, 1);
        let r = simulate(&SimConfig::new(m, 10_000, 4)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,j,estimate,half_width\n0,0,"));
    }
}
