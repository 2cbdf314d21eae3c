mod common;

use proptest::prelude::*;
use retrialq::genfun::{build_system, det_v, ode_residual_grid, Variant};
use retrialq::qbd::balance_residual;
use retrialq::reduction::{okubo_form, resolvent_decomposition, standardize};
use retrialq::tail::fit_tail;
use retrialq::{solve_model, ModelParams, QbdBlocks, SolverOptions};

#[derive(Debug, Clone)]
struct Raw {
    s: usize,
    lambda: f64,
    mu: f64,
    nu: f64,
    p: f64,
    pt_a: f64,
    pb_a: f64,
    at_0: f64,
    thb: f64,
    tht_frac: f64,
    ab: f64,
}

fn raw(max_s: usize) -> impl Strategy<Value = Raw> {
    (
        1..=max_s,
        0.1f64..2.0,
        0.5f64..1.5,
        0.3f64..2.0,
        0.3f64..1.0,
        0.0f64..0.3,
        0.0f64..0.1,
        0.3f64..1.0,
        0.6f64..1.0,
        0.0f64..1.0,
        0.0f64..0.8,
    )
        .prop_map(|(s, lambda, mu, nu, p, pt_a, pb_a, at_0, thb, tht_frac, ab)| Raw {
            s,
            lambda,
            mu,
            nu,
            p,
            pt_a,
            pb_a,
            at_0,
            thb,
            tht_frac,
            ab,
        })
}

fn model(r: &Raw, persistent: bool) -> ModelParams {
    let mut m = ModelParams::classic(r.lambda * r.s as f64, r.mu, r.nu, r.s);
    m.p = r.p;
    m.pb = 1.0 - r.p;
    m.pt_a = r.pt_a;
    m.pb_a = r.pb_a;
    m.p_a = 1.0 - r.pt_a - r.pb_a;
    m.at_0 = r.at_0;
    m.thb = r.thb;
    m.tht = r.tht_frac * (1.0 - r.thb);
    m.theta = 1.0 - m.thb - m.tht;
    m.ab = if persistent { 0.0 } else { r.ab.max(0.05) };
    m.alpha = 1.0 - m.ab;
    m
}

fn ergodic(m: &ModelParams) -> bool {
    m.ab > 0.0 || m.derive().map(|d| d.xi < 0.9).unwrap_or(false)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solved_distribution_is_a_balanced_pmf(r in raw(4), persistent in any::<bool>()) {
        let m = model(&r, persistent);
        prop_assume!(ergodic(&m));
        let d = solve_model(&m, &SolverOptions::default()).unwrap();
        prop_assert!((d.total() - 1.0).abs() < 1e-12);
        prop_assert!(d.levels.iter().flatten().all(|&x| x >= 0.0));
        let res = balance_residual(&QbdBlocks::build(&m).unwrap(), &d);
        prop_assert!(res.interior < 1e-10, "{}", res.interior);
    }

    #[test]
    fn full_and_simplified_residuals_agree(r in raw(3), persistent in any::<bool>()) {
        let m = model(&r, persistent);
        prop_assume!(ergodic(&m));
        let d = solve_model(&m, &SolverOptions::default()).unwrap();
        let full = ode_residual_grid(&d, &m, Variant::Full).unwrap();
        let simp = ode_residual_grid(&d, &m, Variant::Simplified).unwrap();
        for ((_, a), (_, b)) in full.iter().zip(&simp) {
            prop_assert!((*a <= 1e-8) == (*b <= 1e-8));
            prop_assert!(*a <= 1e-8);
        }
    }

    #[test]
    fn full_determinant_formula(r in raw(10), z in -2.0f64..3.0) {
        let m = model(&r, false);
        let d = det_v(&m, Variant::Full, z).unwrap();
        let scale = (z - m.pb).abs().max(1e-3).powi(m.s as i32) * (z - 1.0).abs().max(1e-3);
        prop_assert!((d.numeric - d.formula).abs() <= 1e-12 * scale.max(d.formula.abs()));
    }

    #[test]
    fn persistent_full_determinant_vanishes(r in raw(6), z in -2.0f64..3.0) {
        let m = model(&r, true);
        prop_assert_eq!(det_v(&m, Variant::Full, z).unwrap().numeric, 0.0);
    }

    #[test]
    fn expansion_reproduces_blocks(r in raw(5), j in 0usize..40) {
        let m = model(&r, false);
        let blocks = QbdBlocks::build(&m).unwrap();
        let sys = build_system(&m, Variant::Full).unwrap();
        let (a, b, c) = sys.expanded_blocks(j);
        if j > 0 {
            prop_assert_eq!(a, blocks.a.clone());
        }
        prop_assert_eq!(b, blocks.b_at(j));
        prop_assert_eq!(c, blocks.c_at(j + 1));
    }

    #[test]
    fn okubo_power_identity(s in 2usize..=20, lambda in 0.1f64..3.0, pb in 0.0f64..0.7, thb in 0.5f64..1.0) {
        let mut m = ModelParams::classic(lambda * s as f64, 1.0, 1.0, s);
        m.p = 1.0 - pb;
        m.pb = pb;
        m.thb = thb;
        m.theta = 1.0 - thb;
        let ok = okubo_form(&m).unwrap();
        prop_assert!(ok.power_identity_defect() < 1e-12);
        let st = standardize(&ok).unwrap();
        prop_assert!(st.power_identity_defect() < 1e-12);
        let spec = ok.spectrum();
        prop_assert_eq!(&spec[0].jordan_sizes, &vec![s - 1]);
        prop_assert!((spec[0].value - pb).abs() < 1e-10);
        prop_assert!((spec.last().unwrap().value - (pb + ok.rho_tilde)).abs() < 1e-10);
        prop_assert!(ok.erlang_defect() < 1e-12);
        if s >= 3 {
            let dec = resolvent_decomposition(&ok).unwrap();
            for y in [0.37, 2.9, 7.3] {
                let shifted = nalgebra::DMatrix::identity(s, s) * y - &dec.t;
                let direct = &dec.u * shifted.solve_upper_triangular(&nalgebra::DMatrix::identity(s, s)).unwrap();
                prop_assert!((dec.eval(y) - &direct).amax() <= 1e-10 * dec.condition_scale(y));
            }
        }
    }
}

#[test]
fn decay_invariant_under_rate_rescaling() {
    let base = ModelParams::classic(0.7, 1.0, 0.8, 2);
    let mut scaled = base;
    scaled.lambda *= 3.0;
    scaled.mu *= 3.0;
    scaled.nu *= 3.0;
    let opts = SolverOptions {
        j0: 512,
        ..SolverOptions::default()
    };
    let a = fit_tail(&solve_model(&base, &opts).unwrap(), Some((100, 300))).unwrap();
    let b = fit_tail(&solve_model(&scaled, &opts).unwrap(), Some((100, 300))).unwrap();
    assert!((a.level.eta - b.level.eta).abs() < 1e-9);
}
