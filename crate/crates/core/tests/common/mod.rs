//! Shared helpers: a brute-force dense CTMC oracle built directly from the
//! transition rates, and random parameter generators.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use retrialq::ModelParams;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Stationary vector of a dense generator by replacing the first balance
/// equation with the normalization.
pub fn dense_stationary(q: &DMatrix<f64>) -> DVector<f64> {
    let n = q.nrows();
    let mut sys = q.transpose();
    for k in 0..n {
        sys[(0, k)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = 1.0;
    sys.lu().solve(&rhs).expect("irreducible truncated generator")
}

/// `π[j][i]` of the retrial model truncated at orbit size `depth`;
/// transitions that would exceed the truncation are dropped.
pub fn dense_retrial(m: &ModelParams, depth: usize) -> Vec<Vec<f64>> {
    let w = m.s + 1;
    let n = w * (depth + 1);
    let idx = |i: usize, j: usize| j * w + i;
    let mut q = DMatrix::zeros(n, n);
    let mut add = |from: usize, to: usize, rate: f64| {
        if from != to && rate > 0.0 {
            q[(from, to)] += rate;
            q[(from, from)] -= rate;
        }
    };
    for j in 0..=depth {
        for i in 0..w {
            let here = idx(i, j);
            let up = j < depth;
            if i < m.s {
                add(here, idx(i + 1, j), m.lambda * m.p_a);
                if up {
                    add(here, idx(i, j + 1), m.lambda * m.pt_a);
                }
                if j > 0 {
                    add(here, idx(i + 1, j - 1), j as f64 * m.nu * m.p);
                    add(here, idx(i, j - 1), j as f64 * m.nu * m.pb);
                }
            } else {
                if up {
                    add(here, idx(i, j + 1), m.lambda * m.at_0);
                }
                if j > 0 {
                    add(here, idx(i, j - 1), j as f64 * m.nu * m.ab);
                }
            }
            if i > 0 {
                add(here, idx(i - 1, j), i as f64 * m.mu * m.thb);
                if up {
                    add(here, idx(i - 1, j + 1), i as f64 * m.mu * m.tht);
                }
            }
        }
    }
    let pi = dense_stationary(&q);
    (0..=depth).map(|j| (0..w).map(|i| pi[idx(i, j)]).collect()).collect()
}

/// `π[j][k]` of the Markov-modulated M/M/∞ queue truncated at `depth`
/// customers.
pub fn dense_mmoo(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, depth: usize) -> Vec<Vec<f64>> {
    let w = b.nrows();
    let n = w * (depth + 1);
    let idx = |k: usize, j: usize| j * w + k;
    let mut q = DMatrix::zeros(n, n);
    for j in 0..=depth {
        for k in 0..w {
            let here = idx(k, j);
            let mut out = 0.0;
            for l in 0..w {
                if l != k && b[(k, l)] > 0.0 {
                    q[(here, idx(l, j))] = b[(k, l)];
                    out += b[(k, l)];
                }
            }
            if j < depth {
                q[(here, idx(k, j + 1))] = a[(k, k)];
                out += a[(k, k)];
            }
            if j > 0 {
                q[(here, idx(k, j - 1))] = j as f64 * c[(k, k)];
                out += j as f64 * c[(k, k)];
            }
            q[(here, here)] = -out;
        }
    }
    let pi = dense_stationary(&q);
    (0..=depth).map(|j| (0..w).map(|k| pi[idx(k, j)]).collect()).collect()
}

/// Random valid model with `s` servers. Persistent models are redrawn
/// until `ξ ≤ xi_max`.
pub fn random_model(r: &mut StdRng, s: usize, persistent: bool, xi_max: f64) -> ModelParams {
    loop {
        let mut m = ModelParams::classic(
            r.random_range(0.2..1.5) * s as f64,
            r.random_range(0.5..1.5),
            r.random_range(0.3..2.0),
            s,
        );
        m.p = r.random_range(0.4..1.0);
        m.pb = 1.0 - m.p;
        m.pt_a = r.random_range(0.0..0.3);
        m.pb_a = r.random_range(0.0..0.1);
        m.p_a = 1.0 - m.pt_a - m.pb_a;
        m.at_0 = r.random_range(0.5..1.0);
        m.thb = r.random_range(0.6..1.0);
        m.tht = r.random_range(0.0..1.0 - m.thb);
        m.theta = 1.0 - m.thb - m.tht;
        if persistent {
            m.ab = 0.0;
            m.alpha = 1.0;
        } else {
            m.ab = r.random_range(0.1..0.8);
            m.alpha = 1.0 - m.ab;
        }
        assert!(m.validate().is_valid(), "{:?}", m.validate());
        if !persistent {
            return m;
        }
        let d = m.derive().unwrap();
        if d.xi <= xi_max && d.z_r > 1.0 {
            return m;
        }
    }
}

/// Persistent two-server instance of the pure-retrial family
/// (`p = 1`, `θ̃ = 0`, `p̃_a = 0`).
pub fn random_pure_retrial(r: &mut StdRng, xi_max: f64) -> ModelParams {
    loop {
        let mut m = ModelParams::classic(
            r.random_range(0.2..3.0),
            r.random_range(0.5..1.5),
            r.random_range(0.3..2.0),
            2,
        );
        m.pb_a = r.random_range(0.0..0.2);
        m.p_a = 1.0 - m.pb_a;
        m.at_0 = r.random_range(0.5..1.0);
        m.thb = r.random_range(0.7..1.0);
        m.theta = 1.0 - m.thb;
        let d = m.derive().unwrap();
        if d.xi <= xi_max {
            return m;
        }
    }
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>], levels: usize) -> f64 {
    (0..levels)
        .flat_map(|j| a[j].iter().zip(&b[j]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}
