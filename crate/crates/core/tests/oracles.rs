mod common;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use retrialq::closed_form::{s1_classic_pmf_table, S1Solution, S2Solution};
use retrialq::genfun::mmoo_moments;
use retrialq::qbd::solve_fixed;
use retrialq::{solve_model, ModelParams, QbdBlocks, SolverOptions};

#[test]
fn solver_matches_dense_ctmc_with_abandonment() {
    let mut r = rng(1);
    for s in 1..=3 {
        for _ in 0..4 {
            let m = random_model(&mut r, s, false, 1.0);
            let blocks = QbdBlocks::build(&m).unwrap();
            let depth = 120;
            let qbd = solve_fixed(&blocks, depth).unwrap();
            let dense = dense_retrial(&m, depth);
            let err = max_abs_diff(&qbd.levels, &dense, depth + 1);
            assert!(err < 1e-12, "s={s} err={err:e} {m:?}");
        }
    }
}

#[test]
fn solver_matches_dense_ctmc_persistent() {
    let mut r = rng(2);
    for s in 1..=3 {
        for _ in 0..3 {
            let m = random_model(&mut r, s, true, 0.7);
            let d = solve_model(&m, &SolverOptions::default()).unwrap();
            let dense = dense_retrial(&m, 250);
            let err = max_abs_diff(&d.levels, &dense, d.levels.len().min(251));
            assert!(err < 1e-10, "s={s} err={err:e}");
        }
    }
}

#[test]
fn classic_pmf_oracle() {
    let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
    let d = solve_model(&m, &SolverOptions::default()).unwrap();
    let t = s1_classic_pmf_table(&m, d.truncation()).unwrap();
    for (j, &(a, b)) in t.iter().enumerate() {
        assert!((d.prob(0, j) - a).abs() < 1e-12 && (d.prob(1, j) - b).abs() < 1e-12);
    }
    // ρ(λ + ρν)/(ν(1 − ρ)) = 1 for λ = 0.5, μ = ν = 1
    assert!((d.mean_orbit() - 1.0).abs() < 1e-10, "{}", d.mean_orbit());
}

#[test]
fn single_server_closed_form_oracle() {
    let mut r = rng(3);
    for _ in 0..10 {
        let m = random_model(&mut r, 1, true, 0.8);
        let d = solve_model(&m, &SolverOptions::default()).unwrap();
        let t = S1Solution::new(&m).unwrap().taylor(100);
        for (j, &(q, p)) in t.iter().enumerate() {
            assert!(
                (d.prob(0, j) - q).abs() < 1e-10 && (d.prob(1, j) - p).abs() < 1e-10,
                "{m:?}"
            );
        }
    }
}

#[test]
fn two_server_series_oracle() {
    let mut r = rng(4);
    for _ in 0..5 {
        let m = random_pure_retrial(&mut r, 0.8);
        let d = solve_model(&m, &SolverOptions::default()).unwrap();
        let t = S2Solution::new(&m).unwrap().taylor(100);
        for (j, row) in t.iter().enumerate() {
            for i in 0..3 {
                assert!((d.prob(i, j) - row[i]).abs() < 1e-10, "{m:?} j={j} i={i}");
            }
        }
    }
    let m = ModelParams::classic(0.6, 1.0, 0.7, 2);
    let d = solve_model(&m, &SolverOptions::default()).unwrap();
    let t = S2Solution::new(&m).unwrap().taylor(100);
    for (j, row) in t.iter().enumerate() {
        assert!((d.prob(0, j) - row[0]).abs() < 1e-12);
    }
}

#[test]
fn moments_match_dense_truncation() {
    let mut r = rng(5);
    let n = 3;
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| r.random_range(0.5..3.0)));
    let c = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| r.random_range(0.5..2.0)));
    let mut b = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { r.random_range(0.1..1.0) });
    for i in 0..n {
        let s: f64 = b.row(i).sum();
        b[(i, i)] = -s;
    }
    let m = mmoo_moments(&a, &b, &c, 2).unwrap();
    let pi = dense_mmoo(&a, &b, &c, 80);
    for k in 0..n {
        let mean: f64 = pi.iter().enumerate().map(|(j, l)| j as f64 * l[k]).sum();
        assert!((m[1][k] / mean - 1.0).abs() < 1e-10);
        let fact2: f64 = pi
            .iter()
            .enumerate()
            .map(|(j, l)| (j * j.saturating_sub(1)) as f64 * l[k])
            .sum();
        assert!((m[2][k] / fact2 - 1.0).abs() < 1e-10);
        assert!(m[1][k] >= 0.0);
    }
}
