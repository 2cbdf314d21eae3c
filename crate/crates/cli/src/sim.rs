//! `simulate` and `compare`.

use std::collections::BTreeMap;
use std::path::Path;

use retrialq::sim::{compare, simulate, EventCounts, SimConfig, SimResult};
use retrialq::StationaryDistribution;
use serde_json::json;

use crate::manifest::Run;
use crate::params;
use crate::{print_json, CliError};

pub fn cmd_simulate(
    paramfile: &Path,
    seed: Option<u64>,
    events: u64,
    j_cap: usize,
    out: &Path,
) -> Result<(), CliError> {
    let file = params::load(paramfile)?;
    let seed = params::resolve_seed(seed, file.seed)?;
    let mut config = SimConfig::new(file.params, events, seed);
    config.j_cap = j_cap;
    let result = simulate(&config)?;
    let tolerances = json!({
        "warmup": config.warmup,
        "batches": config.batches,
        "j_cap": config.j_cap,
        "cap_tolerance": retrialq::sim::CAP_TOLERANCE,
    });
    let inputs = json!({ "params": file.params, "events": events });
    let mut run = Run::new(out, "simulate", inputs, vec![seed], tolerances)?;
    let mut csv = run.csv_header_comment().into_bytes();
    result.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    run.write("simulation.csv", &csv)?;
    let mean_orbit: f64 = result
        .estimate
        .iter()
        .enumerate()
        .map(|(j, l)| j as f64 * l.iter().sum::<f64>())
        .sum();
    let body = json!({
        "params": file.params,
        "seed": seed,
        "events": result.events,
        "counts": result.counts,
        "sim_time": result.sim_time,
        "batches": result.batches,
        "cap_fraction": result.cap_fraction,
        "cap_hits": result.cap_hits,
        "mean_orbit_size": mean_orbit,
    });
    run.write_json("summary.json", "retrialq.simulation/1", body)?;
    run.finish()?;
    print_json(&json!({ "events": result.events, "mean_orbit_size": mean_orbit, "out": out }));
    Ok(())
}

/// Cells of a distribution (`probability`) or simulation (`estimate`,
/// `half_width`) CSV.
struct Table {
    simulated: bool,
    cells: BTreeMap<(usize, usize), (f64, f64)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, CliError> {
        let invalid = |m: String| CliError::Invalid(format!("{}: {m}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| invalid(e.to_string()))?;
        let headers = reader.headers().map_err(|e| invalid(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (i_col, j_col) = match (col("i"), col("j")) {
            (Some(i), Some(j)) => (i, j),
            _ => return Err(invalid("missing i/j columns".into())),
        };
        let (value_col, hw_col, simulated) = match (col("probability"), col("estimate")) {
            (Some(p), _) => (p, None, false),
            (None, Some(e)) => (e, col("half_width"), true),
            _ => return Err(invalid("no probability or estimate column".into())),
        };
        let mut cells = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| invalid(e.to_string()))?;
            let field = |k: usize| rec.get(k).ok_or_else(|| invalid("short row".into()));
            let i: usize = field(i_col)?.parse().map_err(|_| invalid("bad i".into()))?;
            let j: usize = field(j_col)?.parse().map_err(|_| invalid("bad j".into()))?;
            let x: f64 = field(value_col)?.parse().map_err(|_| invalid("bad value".into()))?;
            let hw: f64 = match hw_col {
                Some(k) => field(k)?.parse().map_err(|_| invalid("bad half_width".into()))?,
                None => 0.0,
            };
            cells.insert((i, j), (x, hw));
        }
        Ok(Table { simulated, cells })
    }

    fn grid(&self, phases: usize, levels: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut est = vec![vec![0.0; phases]; levels];
        let mut hw = vec![vec![0.0; phases]; levels];
        for (&(i, j), &(x, h)) in &self.cells {
            est[j][i] = x;
            hw[j][i] = h;
        }
        (est, hw)
    }
}

pub fn cmd_compare(first: &Path, second: &Path) -> Result<(), CliError> {
    let a = Table::read(first)?;
    let b = Table::read(second)?;
    let keys = a.cells.keys().chain(b.cells.keys());
    let phases = keys.clone().map(|k| k.0 + 1).max().unwrap_or(1);
    let levels = keys.map(|k| k.1 + 1).max().unwrap_or(1);
    let (mut tv, mut max_abs) = (0.0f64, 0.0f64);
    for j in 0..levels {
        for i in 0..phases {
            let x = a.cells.get(&(i, j)).map_or(0.0, |c| c.0);
            let y = b.cells.get(&(i, j)).map_or(0.0, |c| c.0);
            tv += (x - y).abs();
            max_abs = max_abs.max((x - y).abs());
        }
    }
    let mut report = json!({
        "schema": "retrialq.compare/1",
        "first": first,
        "second": second,
        "cells": a.cells.len().max(b.cells.len()),
        "total_variation": tv / 2.0,
        "max_abs_diff": max_abs,
    });
    // One simulation against one distribution: score cells by half-width.
    let pair = match (a.simulated, b.simulated) {
        (true, false) => Some((&a, &b)),
        (false, true) => Some((&b, &a)),
        _ => None,
    };
    let mut pass = true;
    if let Some((s, d)) = pair {
        let (estimate, half_width) = s.grid(phases, levels);
        let sim = SimResult {
            s: phases - 1,
            j_cap: levels - 1,
            estimate,
            half_width,
            counts: EventCounts::default(),
            events: 0,
            sim_time: 0.0,
            cap_fraction: 0.0,
            cap_hits: 0,
            start: (0, 0),
            end: (0, 0),
            batches: 20,
        };
        let dist = StationaryDistribution {
            levels: d.grid(phases, levels).0,
            captured_mass: 1.0,
            residual: 0.0,
            boundary_residual: 0.0,
            normalized: true,
            clamped: 0,
            min_entry: 0.0,
            warnings: vec![],
            z_r: None,
        };
        let rep = compare(&sim, &dist);
        pass = rep.pass;
        report["scored_cells"] = rep.cells.len().into();
        report["within_three_half_widths"] = rep.within.into();
        report["fraction_within"] = rep.fraction_within.into();
        report["max_abs_z"] = rep.max_abs_z.into();
        report["pass"] = rep.pass.into();
    }
    print_json(&report);
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed(
            "fewer than 95% of cells within three half-widths".into(),
        ))
    }
}
