//! Model parameters, derived rates, ergodicity classification and the
//! affine-death QBD blocks of the multiserver retrial queue.
//!
//! The phase `i` is the number of busy servers (`0..=s`) and the level `j`
//! is the orbit size. Blocks follow the affine pattern
//! `A_j = A`, `C_j = jC + C0`, `B_j = B - diag(A 1) - j diag(C 1) - diag(C0 1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of each probability split.
pub const SPLIT_TOL: f64 = 1e-12;

/// Rates and routing probabilities of the retrial model with `K = 0`.
///
/// Field names mirror the parameter file keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Primary arrival rate.
    pub lambda: f64,
    /// Per-server service rate.
    pub mu: f64,
    /// Per-customer orbit activity rate.
    pub nu: f64,
    /// Number of servers.
    pub s: usize,
    /// Extra waiting places; only 0 is supported.
    #[serde(rename = "K")]
    pub k: usize,
    /// Arrival finds a free server: join service.
    pub p_a: f64,
    /// Arrival finds a free server: go to orbit.
    pub pt_a: f64,
    /// Arrival finds a free server: balk.
    pub pb_a: f64,
    /// Arrival finds all servers busy: go to orbit (the rest balk).
    pub at_0: f64,
    /// Orbit activity with a free server: retrial succeeds.
    pub p: f64,
    /// Orbit activity with a free server: abandon.
    pub pb: f64,
    /// Orbit activity while blocked: stay in orbit.
    pub alpha: f64,
    /// Orbit activity while blocked: abandon.
    pub ab: f64,
    /// After service: serve again.
    pub theta: f64,
    /// After service: leave.
    pub thb: f64,
    /// After service: go to orbit.
    pub tht: f64,
}

impl ModelParams {
    /// Classic persistent M/M/s retrial queue: full acceptance, every
    /// blocked arrival joins the orbit, no abandonment, no feedback.
    pub fn classic(lambda: f64, mu: f64, nu: f64, s: usize) -> Self {
        ModelParams {
            lambda,
            mu,
            nu,
            s,
            k: 0,
            p_a: 1.0,
            pt_a: 0.0,
            pb_a: 0.0,
            at_0: 1.0,
            p: 1.0,
            pb: 0.0,
            alpha: 1.0,
            ab: 0.0,
            theta: 0.0,
            thb: 1.0,
            tht: 0.0,
        }
    }

    /// Phase-space dimension `s + 1`.
    pub fn phases(&self) -> usize {
        self.s + 1
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("nu", self.nu)] {
            if !v.is_finite() {
                violations.push(Violation::NonFiniteRate(name));
            } else if v < 0.0 {
                violations.push(Violation::NegativeRate(name));
            }
        }
        if self.s == 0 {
            violations.push(Violation::NoServers);
        }
        let probs = [
            ("p_a", self.p_a),
            ("pt_a", self.pt_a),
            ("pb_a", self.pb_a),
            ("at_0", self.at_0),
            ("p", self.p),
            ("pb", self.pb),
            ("alpha", self.alpha),
            ("ab", self.ab),
            ("theta", self.theta),
            ("thb", self.thb),
            ("tht", self.tht),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                violations.push(Violation::ProbabilityOutOfRange(name));
            }
        }
        let splits = [
            (Split::Acceptance, self.p_a + self.pt_a + self.pb_a),
            (Split::Retrial, self.p + self.pb),
            (Split::BlockedRetrial, self.alpha + self.ab),
            (Split::Feedback, self.theta + self.thb + self.tht),
        ];
        for (split, sum) in splits {
            if !((sum - 1.0).abs() <= SPLIT_TOL) {
                violations.push(Violation::SplitNotStochastic(split));
            }
        }
        ValidationReport { violations }
    }

    /// Fails with [`Error::InvalidParams`] listing every violation.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidParams(report.to_string()))
        }
    }

    /// Blocked arrivals joining the orbit, `λ·α̃_0`.
    pub fn lambda_ob(&self) -> f64 {
        self.lambda * self.at_0
    }

    /// Any route into the orbit at all.
    pub fn has_orbit_inflow(&self) -> bool {
        self.lambda * self.pt_a > 0.0 || self.lambda_ob() > 0.0 || self.mu * self.tht > 0.0
    }

    pub fn derive(&self) -> Result<DerivedRates> {
        DerivedRates::new(self)
    }

    pub fn ergodicity(&self) -> Result<ErgodicityVerdict> {
        ergodicity(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Acceptance,
    Retrial,
    BlockedRetrial,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NegativeRate(&'static str),
    NonFiniteRate(&'static str),
    NoServers,
    ProbabilityOutOfRange(&'static str),
    SplitNotStochastic(Split),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NegativeRate(name) => write!(f, "negative rate ({name})"),
            Violation::NonFiniteRate(name) => write!(f, "non-finite rate ({name})"),
            Violation::NoServers => write!(f, "server count must be at least 1"),
            Violation::ProbabilityOutOfRange(name) => {
                write!(f, "probability out of [0,1] ({name})")
            }
            Violation::SplitNotStochastic(split) => {
                let name = match split {
                    Split::Acceptance => "acceptance",
                    Split::Retrial => "retrial",
                    Split::BlockedRetrial => "blocked retrial",
                    Split::Feedback => "feedback",
                };
                write!(f, "{name} split not stochastic")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// `κ(z) = k0 + k1·z`, the dimensionless elimination coefficient of the
/// persistent reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub k0: f64,
    pub k1: f64,
}

impl Kappa {
    pub fn eval(&self, z: f64) -> f64 {
        self.k0 + self.k1 * z
    }
}

/// Quantities derived from [`ModelParams`]. Rates with a tilde are divided
/// by `ν` and are infinite when `ν = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedRates {
    pub lambda_ob: f64,
    pub lambda_o: f64,
    /// λ/ν
    pub lt: f64,
    /// μ/ν
    pub mt: f64,
    /// μ̃·θ̄
    pub mb: f64,
    /// λ_ob / (s μ θ̄)
    pub rho: f64,
    pub rho_tilde: f64,
    /// ρ̃/p, the standardized Okubo parameter.
    pub rho_bar: f64,
    pub xi: f64,
    pub z_r: f64,
    pub kappa: Kappa,
    pt_a: f64,
    p_a: f64,
    thb: f64,
    tht: f64,
}

impl DerivedRates {
    fn new(m: &ModelParams) -> Result<Self> {
        let lambda_ob = m.lambda_ob();
        if !(m.thb > 0.0) || !(lambda_ob > 0.0) || !(m.mu > 0.0) {
            return Err(Error::UndefinedRho);
        }
        let s = m.s as f64;
        let rho = lambda_ob / (m.mu * m.thb * s);
        let rho_tilde = 1.0 / rho;
        let rho_bar = rho_tilde / m.p;
        let xi = m.p * (rho * m.thb + m.tht) + m.theta;
        let z_r = m.pb + (1.0 + (m.tht / m.thb) * m.pb) / rho;
        let lt = m.lambda / m.nu;
        let mt = m.mu / m.nu;
        // κ = sμ̃(θ̄ + θ̃z) / (λ̃_ob + sθ̃μ̃); ν cancels.
        let denom = lambda_ob + s * m.tht * m.mu;
        let kappa = Kappa {
            k0: s * m.mu * m.thb / denom,
            k1: s * m.mu * m.tht / denom,
        };
        Ok(DerivedRates {
            lambda_ob,
            lambda_o: m.lambda * m.pt_a,
            lt,
            mt,
            mb: mt * m.thb,
            rho,
            rho_tilde,
            rho_bar,
            xi,
            z_r,
            kappa,
            pt_a: m.pt_a,
            p_a: m.p_a,
            thb: m.thb,
            tht: m.tht,
        })
    }

    /// Diagonal entry `Θ_k(z) = λ̃(z p̃_a − p_a − p̃_a) − kμ̃(θ̄ + θ̃)` of the
    /// ν-scaled generating-function matrix for `k < s`.
    ///
    /// With `p̄_a = 0` this is the familiar `λ̃(z p̃_a − 1) − kμ̃(θ̄ + θ̃)`.
    pub fn theta_k(&self, k: usize, z: f64) -> f64 {
        self.lt * (z * self.pt_a - self.p_a - self.pt_a) - k as f64 * self.mt * (self.thb + self.tht)
    }
}

/// Outcome of the ergodicity classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Blocked retrials abandon with positive probability (or the orbit
    /// can never fill); positive recurrence is certain.
    ErgodicCertain,
    /// Persistent retrials with the dominant singularity outside the unit
    /// disk; ergodic under the singularity conjecture.
    ErgodicConjectural,
    NotErgodic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityVerdict {
    pub verdict: Verdict,
    pub xi: Option<f64>,
    pub z_r: Option<f64>,
    /// `(λ_ob / sμ)·ν_q < ν_q + ν_a`, evaluated when θ = θ̃ = 0 and ᾱ = 0.
    pub hanschke: Option<bool>,
    /// Set when the Hanschke check and `ξ < 1` disagree.
    pub disagreement: bool,
    pub reason: String,
}

impl ErgodicityVerdict {
    pub fn is_ergodic(&self) -> bool {
        self.verdict != Verdict::NotErgodic
    }
}

pub fn ergodicity(m: &ModelParams) -> Result<ErgodicityVerdict> {
    m.ensure_valid()?;
    let certain = |reason: &str| ErgodicityVerdict {
        verdict: Verdict::ErgodicCertain,
        xi: None,
        z_r: None,
        hanschke: None,
        disagreement: false,
        reason: reason.to_string(),
    };
    if !m.has_orbit_inflow() {
        return Ok(certain("orbit receives no customers"));
    }
    if m.nu == 0.0 {
        return Ok(ErgodicityVerdict {
            verdict: Verdict::NotErgodic,
            reason: "nu = 0 with orbit inflow: the orbit can only grow".into(),
            ..certain("")
        });
    }
    if m.ab > 0.0 {
        return Ok(certain("blocked retrials abandon with positive probability"));
    }
    let d = m.derive()?;
    let ergodic = d.xi < 1.0 && d.z_r > 1.0;
    let hanschke = (m.theta == 0.0 && m.tht == 0.0).then(|| {
        let nu_q = m.nu * m.p;
        let nu_a = m.nu * m.pb;
        (d.lambda_ob / (m.s as f64 * m.mu)) * nu_q < nu_q + nu_a
    });
    let disagreement = hanschke.is_some_and(|h| h != ergodic);
    let (verdict, reason) = if ergodic {
        (
            Verdict::ErgodicConjectural,
            format!("persistent retrials, xi = {} < 1, z_r = {} > 1", d.xi, d.z_r),
        )
    } else {
        (
            Verdict::NotErgodic,
            format!("persistent retrials, xi = {} >= 1, z_r = {} <= 1", d.xi, d.z_r),
        )
    };
    Ok(ErgodicityVerdict {
        verdict,
        xi: Some(d.xi),
        z_r: Some(d.z_r),
        hanschke,
        disagreement,
        reason,
    })
}

/// Generator blocks of the affine-death QBD.
#[derive(Debug, Clone, PartialEq)]
pub struct QbdBlocks {
    pub n: usize,
    /// Level-up transitions.
    pub a: DMatrix<f64>,
    /// Conservative generator of the level-preserving transitions.
    pub b: DMatrix<f64>,
    /// Level-down transitions per orbit customer.
    pub c: DMatrix<f64>,
    /// Constant (dispatcher) level-down transitions.
    pub c0: DMatrix<f64>,
    /// Row sums of `a`, `c` and `c0`.
    pub a_sum: DVector<f64>,
    pub c_sum: DVector<f64>,
    pub c0_sum: DVector<f64>,
    /// The originating model was classified as not ergodic.
    pub flagged_not_ergodic: bool,
}

fn retrial_pattern(m: &ModelParams, rate: f64) -> DMatrix<f64> {
    let n = m.phases();
    let s = m.s;
    let mut c = DMatrix::zeros(n, n);
    for i in 0..s {
        c[(i, i)] = rate * m.pb;
        c[(i, i + 1)] = rate * m.p;
    }
    c[(s, s)] = rate * m.ab;
    c
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

impl QbdBlocks {
    pub fn build(m: &ModelParams) -> Result<Self> {
        m.ensure_valid()?;
        if m.k != 0 {
            return Err(Error::UnsupportedK(m.k));
        }
        let n = m.phases();
        let s = m.s;
        let (lambda, mu) = (m.lambda, m.mu);

        let mut a = DMatrix::zeros(n, n);
        for i in 0..s {
            a[(i, i)] = lambda * m.pt_a;
        }
        for i in 1..=s {
            a[(i, i - 1)] = i as f64 * mu * m.tht;
        }
        a[(s, s)] = lambda * m.at_0;

        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            if i < s {
                b[(i, i + 1)] = lambda * m.p_a;
            }
            if i > 0 {
                b[(i, i - 1)] = i as f64 * mu * m.thb;
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&k| k != i).map(|k| b[(i, k)]).sum();
            b[(i, i)] = -off;
        }

        let c = retrial_pattern(m, m.nu);
        let c0 = DMatrix::zeros(n, n);
        let flagged_not_ergodic = matches!(
            ergodicity(m),
            Ok(ErgodicityVerdict {
                verdict: Verdict::NotErgodic,
                ..
            })
        );
        Ok(QbdBlocks {
            n,
            a_sum: row_sums(&a),
            c_sum: row_sums(&c),
            c0_sum: DVector::zeros(n),
            a,
            b,
            c,
            c0,
            flagged_not_ergodic,
        })
    }

    /// Adds a constant retrial term with the same routing as `C` at total
    /// rate `nu0`.
    pub fn with_constant_retrial(mut self, m: &ModelParams, nu0: f64) -> Self {
        self.c0 = retrial_pattern(m, nu0);
        self.c0_sum = row_sums(&self.c0);
        self
    }

    pub fn has_constant_retrial(&self) -> bool {
        self.c0.iter().any(|&x| x != 0.0)
    }

    /// `B − diag(A1) − diag(C0 1)`, the level-independent part of `B_j`
    /// for `j ≥ 1`.
    pub fn b_base(&self) -> DMatrix<f64> {
        let mut m = self.b.clone();
        for i in 0..self.n {
            m[(i, i)] = m[(i, i)] - self.a_sum[i] - self.c0_sum[i];
        }
        m
    }

    /// Diagonal block at level `j`.
    pub fn b_at(&self, j: usize) -> DMatrix<f64> {
        if j == 0 {
            let mut m = self.b.clone();
            for i in 0..self.n {
                m[(i, i)] -= self.a_sum[i];
            }
            return m;
        }
        let mut m = self.b_base();
        let jf = j as f64;
        for i in 0..self.n {
            m[(i, i)] -= jf * self.c_sum[i];
        }
        m
    }

    /// Down block at level `j ≥ 1`.
    pub fn c_at(&self, j: usize) -> DMatrix<f64> {
        debug_assert!(j >= 1);
        &self.c * (j as f64) + &self.c0
    }

    pub fn a_at(&self, _j: usize) -> &DMatrix<f64> {
        &self.a
    }

    /// Largest absolute row sum of `[C_j | B_j | A_j]`, zero for a
    /// conservative generator.
    pub fn conservativity_defect(&self, j: usize) -> f64 {
        let bj = self.b_at(j);
        let cj = if j == 0 {
            DMatrix::zeros(self.n, self.n)
        } else {
            self.c_at(j)
        };
        (0..self.n)
            .map(|i| (cj.row(i).sum() + bj.row(i).sum() + self.a.row(i).sum()).abs())
            .fold(0.0, f64::max)
    }
}

pub fn build_blocks(m: &ModelParams) -> Result<QbdBlocks> {
    QbdBlocks::build(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn valid_params_give_empty_report() {
        assert!(ModelParams::classic(0.5, 1.0, 1.0, 2).validate().is_valid());
    }

    #[test]
    fn retrial_split_violation() {
        let mut m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        m.pb = 0.5;
        let r = m.validate();
        assert!(r.to_string().contains("retrial split not stochastic"), "{r}");
    }

    #[test]
    fn negative_rate_violation() {
        let mut m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        m.mu = -1.0;
        assert!(m.validate().to_string().contains("negative rate"));
    }

    #[test]
    fn derive_classic_single_server() {
        let d = ModelParams::classic(0.5, 1.0, 1.0, 1).derive().unwrap();
        assert!(approx(d.rho, 0.5, 1e-15));
        assert!(approx(d.xi, 0.5, 1e-15));
        assert!(approx(d.z_r, 2.0, 1e-15));
        assert!(approx(d.kappa.k0, 2.0, 1e-15));
        assert_eq!(d.kappa.k1, 0.0);
    }

    #[test]
    fn xi_reduces_to_rho_without_feedback() {
        let mut m = ModelParams::classic(0.7, 0.9, 1.3, 3);
        m.p = 1.0;
        let d = m.derive().unwrap();
        assert!(approx(d.xi, d.rho, 1e-15));
    }

    #[test]
    fn zero_arrivals_leave_rho_undefined() {
        let m = ModelParams::classic(0.0, 1.0, 1.0, 1);
        assert_eq!(m.derive().unwrap_err().code(), "undefined-rho");
    }

    #[test]
    fn verdicts() {
        let mut m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        m.alpha = 0.7;
        m.ab = 0.3;
        assert_eq!(m.ergodicity().unwrap().verdict, Verdict::ErgodicCertain);

        let m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        let v = m.ergodicity().unwrap();
        assert_eq!(v.verdict, Verdict::ErgodicConjectural);
        assert!(approx(v.xi.unwrap(), 0.5, 1e-15));
        assert_eq!(v.hanschke, Some(true));

        let m = ModelParams::classic(1.2, 1.0, 1.0, 1);
        let v = m.ergodicity().unwrap();
        assert_eq!(v.verdict, Verdict::NotErgodic);
        assert_eq!(v.hanschke, Some(false));
        assert!(!v.disagreement);
    }

    #[test]
    fn zero_retrial_rate_with_inflow_is_not_ergodic() {
        let mut m = ModelParams::classic(0.5, 1.0, 0.0, 2);
        m.alpha = 0.5;
        m.ab = 0.5;
        assert_eq!(m.ergodicity().unwrap().verdict, Verdict::NotErgodic);
    }

    #[test]
    fn single_server_blocks() {
        let mut m = ModelParams::classic(0.8, 1.3, 0.6, 1);
        m.p = 0.75;
        m.pb = 0.25;
        m.alpha = 0.9;
        m.ab = 0.1;
        m.at_0 = 0.4;
        let b = QbdBlocks::build(&m).unwrap();
        let lob = 0.8 * 0.4;
        assert_eq!(b.a, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, lob]));
        assert_eq!(
            b.c,
            DMatrix::from_row_slice(2, 2, &[0.6 * 0.25, 0.6 * 0.75, 0.0, 0.6 * 0.1])
        );
    }

    #[test]
    fn null_process_has_zero_blocks() {
        let m = ModelParams::classic(0.0, 0.0, 0.0, 2);
        let b = QbdBlocks::build(&m).unwrap();
        assert!(b.a.iter().chain(b.b.iter()).chain(b.c.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn row_sums_vanish_exactly_for_dyadic_rates() {
        let mut m = ModelParams::classic(0.5, 1.0, 0.25, 3);
        m.theta = 0.25;
        m.thb = 0.5;
        m.tht = 0.25;
        m.p = 0.5;
        m.pb = 0.5;
        let b = QbdBlocks::build(&m).unwrap();
        assert_eq!(b.conservativity_defect(3), 0.0);
    }

    #[test]
    fn nonzero_k_rejected() {
        let mut m = ModelParams::classic(0.5, 1.0, 1.0, 1);
        m.k = 2;
        assert_eq!(QbdBlocks::build(&m).unwrap_err().code(), "unsupported-K");
    }
}
