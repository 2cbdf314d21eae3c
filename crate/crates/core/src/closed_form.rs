//! Exact solutions used as oracles for the numerical solver.
//!
//! * single server, persistent retrials: `q(z) = c·u(z)^{−λ̄}·e^{−γ u(z)}`,
//!   `p(z) = k·q(z)/u(z)` with `u(z) = θ̄ + p̄θ̃ − ρθ̄(z − p̄)` vanishing at
//!   the dominant singularity `z_r`;
//! * its classic specialization (`p = p_a = θ̄ = α̃_0 = 1`), a pair of
//!   negative-binomial type pmfs;
//! * two servers, pure persistent retrials without feedback to orbit: `p_0`
//!   is a Gauss hypergeometric series in `x = ρz`.

use serde::Serialize;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{DerivedRates, ModelParams};

const PROB_TOL: f64 = 1e-12;

fn is(x: f64, v: f64) -> bool {
    (x - v).abs() <= PROB_TOL
}

/// Closed-form generating functions of the single-server persistent model.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct S1Solution {
    pub lambda_bar: f64,
    /// `u(z) = u0 − u1·z`.
    pub u0: f64,
    pub u1: f64,
    /// Exponent rate `γ` in `e^{−γ u}`.
    pub gamma: f64,
    /// `p(z) = k·q(z)/u(z)`.
    pub k: f64,
    /// Normalization constant fixed by `q(1) + p(1) = 1`.
    pub c: f64,
    pub z_r: f64,
    pub xi: f64,
}

impl S1Solution {
    pub fn new(m: &ModelParams) -> Result<Self> {
        m.ensure_valid()?;
        if m.s != 1 {
            return Err(Error::NotApplicable("single-server formula needs s = 1"));
        }
        if m.ab != 0.0 {
            return Err(Error::NotApplicable("single-server formula needs persistent retrials"));
        }
        if !(m.nu > 0.0) {
            return Err(Error::NotApplicable("single-server formula needs nu > 0"));
        }
        let d = m.derive()?;
        if !(d.xi < 1.0) {
            return Err(Error::NotApplicable("single-server formula needs xi < 1"));
        }
        let lt = d.lt;
        let lob = d.lambda_ob / m.nu;
        let accept = m.p_a + m.pt_a;
        let rt = d.rho * m.thb;
        // λ̄ = λ̃(p_a + p̃_a − p̄p̃_a)(1 + θ̃/(ρθ̄))
        let lambda_bar = lt * (accept - m.pb * m.pt_a) * (1.0 + m.tht / rt);
        let u1 = rt;
        let u0 = m.thb + m.pb * m.tht + rt * m.pb;
        let gamma_rate = lt * m.pt_a / rt;
        let k = lt * (accept - m.pb * m.pt_a) * rt / lob;
        let mut sol = S1Solution {
            lambda_bar,
            u0,
            u1,
            gamma: gamma_rate,
            k,
            c: 1.0,
            z_r: d.z_r,
            xi: d.xi,
        };
        let u_one = sol.u(1.0);
        let log_q1 = -lambda_bar * u_one.ln() - gamma_rate * u_one;
        sol.c = 1.0 / (log_q1.exp() * (1.0 + k / u_one));
        Ok(sol)
    }

    pub fn u(&self, z: f64) -> f64 {
        self.u0 - self.u1 * z
    }

    /// `(q(z), p(z))` for `z` in `[0, 1]`.
    pub fn eval(&self, z: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::NotApplicable("evaluation restricted to z in [0, 1]"));
        }
        let u = self.u(z);
        let q = self.c * (-self.lambda_bar * u.ln() - self.gamma * u).exp();
        Ok((q, self.k * q / u))
    }

    /// Derivatives `(q'(z), p'(z))`.
    pub fn eval_derivative(&self, z: f64) -> Result<(f64, f64)> {
        let (q, _) = self.eval(z)?;
        let u = self.u(z);
        // d/dz ln q = u1 (λ̄/u + γ)
        let dq = q * self.u1 * (self.lambda_bar / u + self.gamma);
        let dp = self.k * (dq * u + q * self.u1) / (u * u);
        Ok((dq, dp))
    }

    /// Taylor coefficients `(π_{0,j}, π_{1,j})` for `j = 0..=jmax`, from the
    /// product of the binomial series of `u^{−λ̄}` and the exponential series
    /// of `e^{−γu}`.
    pub fn taylor(&self, jmax: usize) -> Vec<(f64, f64)> {
        let ratio = self.u1 / self.u0; // 1/z_r
        let base = self.c * (-self.lambda_bar * self.u0.ln() - self.gamma * self.u0).exp();
        let mut binom = Vec::with_capacity(jmax + 1);
        let mut g = 1.0;
        for j in 0..=jmax {
            binom.push(g);
            g *= (self.lambda_bar + j as f64) / (j as f64 + 1.0) * ratio;
        }
        let rate = self.gamma * self.u1;
        let mut expo = Vec::with_capacity(jmax + 1);
        let mut e = 1.0;
        for k in 0..=jmax {
            expo.push(e);
            e *= rate / (k as f64 + 1.0);
        }
        let mut out = Vec::with_capacity(jmax + 1);
        let mut p_prev = 0.0;
        for j in 0..=jmax {
            let q: f64 = base * (0..=j).map(|k| binom[j - k] * expo[k]).sum::<f64>();
            let p = p_prev * ratio + self.k / self.u0 * q;
            out.push((q, p));
            p_prev = p;
        }
        out
    }

    /// Leading asymptotic term of `(π_{0,j}, π_{1,j})`.
    pub fn asymptotic(&self, j: usize) -> AsymptoticTerm {
        let jf = j as f64;
        let lb = self.lambda_bar;
        let scale0 = self.c * self.u0.powf(-lb);
        let scale1 = scale0 * self.k / self.u0;
        let geo = self.z_r.powf(-jf);
        // (j+1)^{(λ̄−1)} = Γ(j + λ̄)/Γ(j + 1)
        let poch0 = (ln_gamma(jf + lb) - ln_gamma(jf + 1.0) - ln_gamma(lb)).exp();
        let poch1 = (ln_gamma(jf + lb + 1.0) - ln_gamma(jf + 1.0) - ln_gamma(lb + 1.0)).exp();
        AsymptoticTerm {
            pochhammer: (scale0 * poch0 * geo, scale1 * poch1 * geo),
            power_law: (
                scale0 * jf.powf(lb - 1.0) / gamma(lb) * geo,
                scale1 * jf.powf(lb) / gamma(lb + 1.0) * geo,
            ),
            decay: 1.0 / self.z_r,
            exponent: lb - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AsymptoticTerm {
    /// Pre-limit form with ascending factorials.
    pub pochhammer: (f64, f64),
    /// `j^{λ̄−1}` power-law form.
    pub power_law: (f64, f64),
    /// Geometric decay `1/z_r`.
    pub decay: f64,
    /// Power exponent of the idle-server component.
    pub exponent: f64,
}

pub fn s1_solution(m: &ModelParams, z: f64) -> Result<(f64, f64)> {
    S1Solution::new(m)?.eval(z)
}

pub fn s1_asymptotic(m: &ModelParams, j: usize) -> Result<AsymptoticTerm> {
    Ok(S1Solution::new(m)?.asymptotic(j))
}

fn check_classic(m: &ModelParams) -> Result<DerivedRates> {
    m.ensure_valid()?;
    let classic =
        m.s == 1 && is(m.p, 1.0) && is(m.p_a, 1.0) && is(m.thb, 1.0) && is(m.at_0, 1.0) && m.ab == 0.0 && m.nu > 0.0;
    if !classic {
        return Err(Error::NotApplicable(
            "classic pmf needs s = 1, p = p_a = thb = at_0 = 1, ab = 0",
        ));
    }
    let d = m.derive()?;
    if !(d.rho < 1.0) {
        return Err(Error::NotApplicable("classic pmf needs rho < 1"));
    }
    Ok(d)
}

/// Classic single-server pmf `(π_{0,j}, π_{1,j})` for `j = 0..=jmax`.
pub fn s1_classic_pmf_table(m: &ModelParams, jmax: usize) -> Result<Vec<(f64, f64)>> {
    let d = check_classic(m)?;
    let (rho, lt) = (d.rho, d.lt);
    let head = (1.0 - rho).powf(lt + 1.0);
    let mut a = head; // ρ^j (λ̃)_j / j!
    let mut b = head * rho; // ρ^{j+1} (λ̃+1)_j / j!
    let mut out = Vec::with_capacity(jmax + 1);
    for j in 0..=jmax {
        out.push((a, b));
        let jf = j as f64;
        a *= rho * (lt + jf) / (jf + 1.0);
        b *= rho * (lt + 1.0 + jf) / (jf + 1.0);
    }
    Ok(out)
}

pub fn s1_classic_pmf(m: &ModelParams, j: usize) -> Result<(f64, f64)> {
    Ok(s1_classic_pmf_table(m, j)?[j])
}

/// Two-server pure persistent retrial solution.
///
/// With `x = ρz`, `q = p_0` solves
/// `x(x−1)q'' + [x(2λ_a + μ̄ + 1) − (1 + λ_a + μ̄ + λ̃_ob/2)]q' + λ_a² q = 0`
/// where `λ_a = λ̃p_a`; its analytic solution is a Gauss series. `p_1` and
/// `p_2` follow from the first reduced equation and the eliminated row.
#[derive(Debug, Clone, Serialize)]
pub struct S2Solution {
    pub rho: f64,
    pub lambda_a: f64,
    pub mu_bar: f64,
    pub lambda_ob: f64,
    /// Gauss coefficients `t_n` of `q(x) = C Σ t_n x^n`, grown on demand.
    coeffs: Vec<f64>,
    pub norm: f64,
}

impl S2Solution {
    pub fn new(m: &ModelParams) -> Result<Self> {
        m.ensure_valid()?;
        let ok = m.s == 2 && m.ab == 0.0 && is(m.p, 1.0) && m.tht == 0.0 && m.pt_a == 0.0 && m.nu > 0.0;
        if !ok {
            return Err(Error::NotApplicable(
                "two-server series needs s = 2, ab = 0, p = 1, tht = 0, pt_a = 0, nu > 0",
            ));
        }
        let d = m.derive()?;
        if !(d.xi < 1.0) {
            return Err(Error::NotApplicable("two-server series needs xi < 1"));
        }
        let mut sol = S2Solution {
            rho: d.rho,
            lambda_a: d.lt * m.p_a,
            mu_bar: d.mb,
            lambda_ob: d.lambda_ob / m.nu,
            coeffs: vec![1.0],
            norm: 1.0,
        };
        sol.normalize();
        Ok(sol)
    }

    fn extend(&mut self, n: usize) {
        let slope = 2.0 * self.lambda_a + self.mu_bar + 1.0;
        let shift = 1.0 + self.lambda_a + self.mu_bar + self.lambda_ob / 2.0;
        let sq = self.lambda_a * self.lambda_a;
        while self.coeffs.len() <= n {
            let k = (self.coeffs.len() - 1) as f64;
            let t = *self.coeffs.last().unwrap();
            // (k+1)(k+c) t_{k+1} = [k(k−1) + slope·k + λ_a²] t_k
            let next = t * (k * (k - 1.0) + slope * k + sq) / ((k + 1.0) * (k + shift));
            self.coeffs.push(next);
        }
    }

    /// Unnormalized `π_{0,j}` for `j = 0..=n` up to the factor `C`.
    fn raw_q(&mut self, n: usize) -> Vec<f64> {
        self.extend(n);
        let mut pw = 1.0;
        self.coeffs[..=n]
            .iter()
            .map(|t| {
                let v = t * pw;
                pw *= self.rho;
                v
            })
            .collect()
    }

    fn triples(&self, q: &[f64], jmax: usize) -> Vec<[f64; 3]> {
        let p1 = |j: usize| (j as f64 + self.lambda_a) * q[j] / self.mu_bar;
        (0..=jmax)
            .map(|j| {
                let p2 = (j as f64 + 1.0) * (q[j + 1] + p1(j + 1)) / self.lambda_ob;
                [q[j], p1(j), p2]
            })
            .collect()
    }

    fn normalize(&mut self) {
        let mut n = 256;
        loop {
            let q = self.raw_q(n + 1);
            let rows = self.triples(&q, n);
            let total: f64 = rows.iter().flatten().sum();
            let last: f64 = rows[n].iter().sum();
            if last <= 1e-18 * total || n >= 1 << 22 {
                self.norm = 1.0 / total;
                return;
            }
            n *= 2;
        }
    }

    /// Normalized `(π_{0,j}, π_{1,j}, π_{2,j})` for `j = 0..=jmax`.
    pub fn taylor(&mut self, jmax: usize) -> Vec<[f64; 3]> {
        let q = self.raw_q(jmax + 1);
        let norm = self.norm;
        self.triples(&q, jmax)
            .into_iter()
            .map(|r| r.map(|x| x * norm))
            .collect()
    }

    /// `p_0(z)` by direct summation of the Gauss series.
    pub fn p0(&mut self, z: f64) -> Result<f64> {
        let x = self.rho * z;
        if x.abs() >= 1.0 {
            return Err(Error::SeriesDivergence(x.abs()));
        }
        let mut sum = 0.0;
        let mut pw = 1.0;
        let mut n = 0;
        loop {
            self.extend(n);
            let term = self.coeffs[n] * pw;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() && n > 8 {
                break;
            }
            pw *= x;
            n += 1;
        }
        Ok(self.norm * sum)
    }
}

pub fn s2_hypergeometric(m: &ModelParams, z: f64) -> Result<f64> {
    S2Solution::new(m)?.p0(z)
}
