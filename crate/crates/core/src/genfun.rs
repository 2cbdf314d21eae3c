//! Generating-function differential systems `p'(z)V(z) = p(z)U(z) + π_0 G(z)`.
//!
//! The full system comes straight from the QBD blocks:
//! `V = zC̃ − C`, `U = B + zA − Ã + z⁻¹C⁰ − C̃⁰`, `G = C̃⁰ − z⁻¹C⁰`, where a
//! tilde denotes the diagonal matrix of row sums. The simplified variant
//! replaces the last equation by the sum of all equations divided by
//! `z − 1`. Full and simplified systems keep exact (unscaled) blocks and are
//! divided by `ν` on evaluation; reduced and Okubo systems from
//! [`crate::reduction`] are already `ν`-normalized.

use nalgebra::{ComplexField, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{left_null_vector, solve_left, MatPoly};
use crate::model::{ModelParams, QbdBlocks};
use crate::qbd::StationaryDistribution;
use crate::reduction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    Simplified,
    Reduced,
    Okubo,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Simplified => "simplified",
            Variant::Reduced => "reduced",
            Variant::Okubo => "okubo",
        }
    }
}

/// Row recovering the eliminated component of a reduced system:
/// `p_s = (Σ_i d_i p_i' − Σ_i a_i p_i) / denom`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recovery {
    pub d: Vec<f64>,
    pub a: Vec<f64>,
    pub denom: f64,
}

impl Recovery {
    pub fn eval(&self, p: &[f64], dp: &[f64]) -> f64 {
        let num: f64 = self.d.iter().zip(dp).map(|(d, x)| d * x).sum::<f64>()
            - self.a.iter().zip(p).map(|(a, x)| a * x).sum::<f64>();
        num / self.denom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrixSystem {
    pub variant: Variant,
    pub dim: usize,
    pub v: MatPoly,
    pub u: MatPoly,
    /// `G(z)` multiplying `π_0` when a constant retrial term is present.
    pub inhomogeneous: Option<MatPoly>,
    /// Divisor applied on evaluation (`ν` for full/simplified, else 1).
    pub scale: f64,
    pub recovery: Option<Recovery>,
}

impl PolyMatrixSystem {
    pub fn v_at(&self, z: f64) -> DMatrix<f64> {
        self.v.eval(z) / self.scale
    }

    pub fn u_at(&self, z: f64) -> DMatrix<f64> {
        self.u.eval(z) / self.scale
    }

    pub fn g_at(&self, z: f64) -> Option<DMatrix<f64>> {
        self.inhomogeneous.as_ref().map(|g| g.eval(z) / self.scale)
    }

    /// Highest power of `z` over the entries of `V` and `U`.
    pub fn degree(&self) -> i32 {
        self.v.degree().max(self.u.degree())
    }

    /// Coefficient of `π_m` in the `z^j` equation of `p(z)U − p'(z)V`:
    /// `U_{j−m} − m·V_{j−m+1}`, unscaled.
    pub fn recurrence_coefficient(&self, j: usize, m: usize) -> DMatrix<f64> {
        let k = j as i32 - m as i32;
        let mv = self.v.coeff(k + 1) * m as f64;
        self.u.coeff(k) - mv
    }

    /// The three blocks `(A, B_j, C_{j+1})` multiplying `π_{j−1}, π_j,
    /// π_{j+1}` in the `z^j` equation, with the `π_0` correction at `j = 0`.
    pub fn expanded_blocks(&self, j: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let up = if j == 0 {
            DMatrix::zeros(self.dim, self.dim)
        } else {
            self.recurrence_coefficient(j, j - 1)
        };
        let mut mid = self.recurrence_coefficient(j, j);
        if j == 0 {
            if let Some(g) = &self.inhomogeneous {
                mid += g.coeff(0);
            }
        }
        (up, mid, self.recurrence_coefficient(j, j + 1))
    }
}

fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

/// Full or simplified system of a model without constant retrials.
pub fn build_system(params: &ModelParams, variant: Variant) -> Result<PolyMatrixSystem> {
    match variant {
        Variant::Reduced | Variant::Okubo => Err(Error::UnsupportedVariant(variant.name())),
        _ => {
            if !(params.nu > 0.0) {
                return Err(Error::ZeroRetrialRate);
            }
            let blocks = QbdBlocks::build(params)?;
            build_system_from_blocks(&blocks, variant, params.nu)
        }
    }
}

/// Full or simplified system from arbitrary affine-death blocks; `scale`
/// is the divisor used on evaluation.
pub fn build_system_from_blocks(blocks: &QbdBlocks, variant: Variant, scale: f64) -> Result<PolyMatrixSystem> {
    if matches!(variant, Variant::Reduced | Variant::Okubo) {
        return Err(Error::UnsupportedVariant(variant.name()));
    }
    let n = blocks.n;
    let with_c0 = blocks.has_constant_retrial();
    let low = if with_c0 { -1 } else { 0 };

    let mut v = MatPoly::zeros(n, 0, 1);
    *v.coeff_mut(0) = -&blocks.c;
    *v.coeff_mut(1) = diag(&blocks.c_sum);

    let mut u = MatPoly::zeros(n, low, 1);
    *u.coeff_mut(0) = blocks.b_base();
    *u.coeff_mut(1) = blocks.a.clone();
    let mut g = None;
    if with_c0 {
        *u.coeff_mut(-1) = blocks.c0.clone();
        let mut gp = MatPoly::zeros(n, -1, 0);
        *gp.coeff_mut(0) = diag(&blocks.c0_sum);
        *gp.coeff_mut(-1) = -&blocks.c0;
        g = Some(gp);
    }

    if variant == Variant::Simplified {
        // V·1 = (z − 1)C̃1, U·1 = (z − 1)A1 + (z⁻¹ − 1)C⁰1, G·1 = (1 − z⁻¹)C⁰1.
        let last = n - 1;
        for k in v.low..=v.high() {
            let col = if k == 0 {
                blocks.c_sum.clone()
            } else {
                DVector::zeros(n)
            };
            v.coeff_mut(k).set_column(last, &col);
        }
        for k in u.low..=u.high() {
            let col = match k {
                0 => blocks.a_sum.clone(),
                -1 => -&blocks.c0_sum,
                _ => DVector::zeros(n),
            };
            u.coeff_mut(k).set_column(last, &col);
        }
        if let Some(gp) = g.as_mut() {
            gp.coeff_mut(0).set_column(last, &DVector::zeros(n));
            gp.coeff_mut(-1).set_column(last, &blocks.c0_sum);
        }
    }

    Ok(PolyMatrixSystem {
        variant,
        dim: n,
        v,
        u,
        inhomogeneous: g,
        scale,
        recovery: None,
    })
}

/// Any system variant of a model.
pub fn system_for(params: &ModelParams, variant: Variant) -> Result<PolyMatrixSystem> {
    match variant {
        Variant::Full | Variant::Simplified => build_system(params, variant),
        Variant::Reduced => Ok(reduction::reduce_persistent(params)?.system),
        Variant::Okubo => Ok(reduction::okubo_form(params)?.system()),
    }
}

/// Truncated generating-function values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GfValue<T> {
    pub z: T,
    pub p: Vec<T>,
    pub dp: Vec<T>,
    /// Bound on the neglected tail of each `p_i(z)`.
    pub tail_bound: f64,
}

/// Estimated mass beyond the truncation level, from the last level mass and
/// the geometric ratio of the last two levels.
pub fn tail_mass(dist: &StationaryDistribution) -> f64 {
    let j = dist.truncation();
    let last = dist.level_mass(j);
    if j == 0 || last == 0.0 {
        return 0.0;
    }
    let prev = dist.level_mass(j - 1);
    let r = if prev > 0.0 { last / prev } else { 1.0 };
    if r < 1.0 {
        last * r / (1.0 - r)
    } else {
        f64::INFINITY
    }
}

/// `p_i(z) = Σ_j π_{i,j} z^j` and its derivative by the truncated series.
pub fn eval_gf<T>(dist: &StationaryDistribution, z: T) -> Result<GfValue<T>>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let modulus = z.modulus();
    if let Some(z_r) = dist.z_r {
        if modulus >= z_r {
            return Err(Error::DivergenceRisk { modulus, z_r });
        }
    }
    let n = dist.phases();
    let depth = dist.truncation();
    // Horner in z for p and p' together.
    let mut p = vec![T::zero(); n];
    let mut dp = vec![T::zero(); n];
    for j in (0..=depth).rev() {
        let level = &dist.levels[j];
        for i in 0..n {
            dp[i] = dp[i] * z + p[i];
            p[i] = p[i] * z + T::from_real(level[i]);
        }
    }
    let tail_bound = tail_mass(dist) * modulus.powi(depth as i32).max(1.0);
    Ok(GfValue { z, p, dp, tail_bound })
}

fn row(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Sup norm of `p'V − pU − π_0 G` for the truncated series at real `z`.
pub fn system_residual(sys: &PolyMatrixSystem, dist: &StationaryDistribution, z: f64) -> Result<f64> {
    let gf = eval_gf(dist, z)?;
    let k = sys.dim;
    let p = row(&gf.p[..k]);
    let dp = row(&gf.dp[..k]);
    let mut r = sys.v_at(z).tr_mul(&dp) - sys.u_at(z).tr_mul(&p);
    if let Some(g) = sys.g_at(z) {
        r -= g.tr_mul(&row(&dist.levels[0][..k]));
    }
    Ok(r.amax())
}

/// Residual of the model's generating-function system of the given variant.
pub fn ode_residual(dist: &StationaryDistribution, params: &ModelParams, variant: Variant, z: f64) -> Result<f64> {
    let sys = system_for(params, variant)?;
    system_residual(&sys, dist, z)
}

/// Residual on the grid `z = 0.1, …, 0.9`.
pub fn ode_residual_grid(
    dist: &StationaryDistribution,
    params: &ModelParams,
    variant: Variant,
) -> Result<Vec<(f64, f64)>> {
    let sys = system_for(params, variant)?;
    (1..=9)
        .map(|k| {
            let z = k as f64 / 10.0;
            system_residual(&sys, dist, z).map(|r| (z, r))
        })
        .collect()
}

/// Both sides of the bivariate equation for `φ(y, z) = Σ_i y^i p_i(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bivariate {
    pub lhs: f64,
    pub rhs: f64,
}

impl Bivariate {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Sums of the truncated series needed by the bivariate equation.
struct Phi {
    phi: f64,
    phi_y: f64,
    phi_z: f64,
    ps: f64,
    dps: f64,
}

fn phi(dist: &StationaryDistribution, y: f64, z: f64) -> Result<Phi> {
    let gf = eval_gf(dist, z)?;
    let s = dist.phases() - 1;
    let mut out = Phi {
        phi: 0.0,
        phi_y: 0.0,
        phi_z: 0.0,
        ps: gf.p[s],
        dps: gf.dp[s],
    };
    for i in 0..=s {
        out.phi += y.powi(i as i32) * gf.p[i];
        out.phi_z += y.powi(i as i32) * gf.dp[i];
        if i > 0 {
            out.phi_y += i as f64 * y.powi(i as i32 - 1) * gf.p[i];
        }
    }
    Ok(out)
}

/// Bivariate equation
///
/// `ν(z − p̄ − py)φ_z + νy^s(p̄ − ᾱ + z(ᾱ − 1) + py)p_s'
///   = λφ(p̃_a z − p_a − p̃_a + p_a y) + μφ_y(θ̄ + θ̃z − y(θ̄ + θ̃))
///   + y^s(z(λ_ob − λp̃_a) − λ_ob + λ(p_a + p̃_a) − λp_a y)p_s`.
pub fn bivariate(dist: &StationaryDistribution, m: &ModelParams, y: f64, z: f64) -> Result<Bivariate> {
    let f = phi(dist, y, z)?;
    let ys = y.powi(m.s as i32);
    let lob = m.lambda_ob();
    let accept = m.p_a + m.pt_a;
    let lhs = m.nu * (z - m.pb - m.p * y) * f.phi_z + m.nu * ys * (m.pb - m.ab + z * (m.ab - 1.0) + m.p * y) * f.dps;
    let rhs = m.lambda * f.phi * (m.pt_a * z - accept + m.p_a * y)
        + m.mu * f.phi_y * (m.thb + m.tht * z - y * (m.thb + m.tht))
        + ys * (z * (lob - m.lambda * m.pt_a) - (lob - m.lambda * accept) - m.lambda * m.p_a * y) * f.ps;
    Ok(Bivariate { lhs, rhs })
}

pub fn bivariate_residual(dist: &StationaryDistribution, m: &ModelParams, y: f64, z: f64) -> Result<f64> {
    Ok(bivariate(dist, m, y, z)?.residual())
}

/// Right-hand side of the classic single-orbit form
/// `λ(y − 1)φ + μ(1 − y)φ_y + λy^s(z − y)p_s`.
pub fn falin_rhs(dist: &StationaryDistribution, m: &ModelParams, y: f64, z: f64) -> Result<f64> {
    let f = phi(dist, y, z)?;
    let ys = y.powi(m.s as i32);
    Ok(m.lambda * (y - 1.0) * f.phi + m.mu * (1.0 - y) * f.phi_y + m.lambda * ys * (z - y) * f.ps)
}

/// Numeric and closed-form determinant of `V(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetV {
    pub numeric: f64,
    pub formula: f64,
}

impl DetV {
    pub fn rel_err(&self) -> f64 {
        let d = (self.numeric - self.formula).abs();
        if self.formula == 0.0 {
            d
        } else {
            d / self.formula.abs()
        }
    }
}

/// `det V(z)` for the full, simplified or reduced variant, in `ν` units.
///
/// * full: `ᾱ(z − p̄)^s(z − 1)`;
/// * simplified: `ᾱ(z − p̄)^s`;
/// * reduced: `(z − p̄)^{s−1}·ρθ̄/(ρθ̄ + θ̃)·(z − z_r)`.
pub fn det_v(params: &ModelParams, variant: Variant, z: f64) -> Result<DetV> {
    let s = params.s as i32;
    let zp = z - params.pb;
    let (sys, formula) = match variant {
        Variant::Full => (build_system(params, variant)?, params.ab * zp.powi(s) * (z - 1.0)),
        Variant::Simplified => (build_system(params, variant)?, params.ab * zp.powi(s)),
        Variant::Reduced => {
            if !(params.thb > 0.0) {
                return Err(Error::Undefined("reduced determinant needs thb > 0"));
            }
            let red = reduction::reduce_persistent(params)?;
            let d = params.derive()?;
            let rt = d.rho * params.thb;
            (red.system, zp.powi(s - 1) * rt / (rt + params.tht) * (z - d.z_r))
        }
        Variant::Okubo => return Err(Error::UnsupportedVariant(variant.name())),
    };
    Ok(DetV {
        numeric: sys.v_at(z).determinant(),
        formula,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularityKind {
    Regular,
    Irregular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Singularity {
    pub z: f64,
    pub multiplicity: usize,
    pub kind: SingularityKind,
}

/// Finite singular points of the persistent reduced system: `p̄` with
/// multiplicity `s − 1` (irregular for `s ≥ 3`) and the dominant regular
/// point `z_r`.
pub fn singularities(params: &ModelParams) -> Result<Vec<Singularity>> {
    let d = params.derive()?;
    let mut out = Vec::new();
    if params.s >= 2 {
        out.push(Singularity {
            z: params.pb,
            multiplicity: params.s - 1,
            kind: if params.s >= 3 {
                SingularityKind::Irregular
            } else {
                SingularityKind::Regular
            },
        });
    }
    out.push(Singularity {
        z: d.z_r,
        multiplicity: 1,
        kind: SingularityKind::Regular,
    });
    Ok(out)
}

/// Factorial moments `m_k = p^{(k)}(1)` of a Markov-modulated M/M/∞ queue
/// with arrival rates `A`, phase generator `B` and per-customer service
/// rates `C`: `m_0 B = 0`, `m_k(kC − B) = k·m_{k−1}A`.
pub fn mmoo_moments(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, kmax: usize) -> Result<Vec<DVector<f64>>> {
    let n = b.nrows();
    if b.ncols() != n || a.shape() != (n, n) || c.shape() != (n, n) || n == 0 {
        return Err(Error::InvalidParams(
            "phase matrices must be square and equal size".into(),
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let off = i != j;
            if off && (a[(i, j)] != 0.0 || c[(i, j)] != 0.0) {
                return Err(Error::InvalidParams("A and C must be diagonal".into()));
            }
            if off && b[(i, j)] < 0.0 {
                return Err(Error::InvalidParams("B has a negative off-diagonal rate".into()));
            }
        }
        if a[(i, i)] < 0.0 || c[(i, i)] < 0.0 {
            return Err(Error::InvalidParams("A and C must be nonnegative".into()));
        }
        let scale = b.row(i).iter().map(|x| x.abs()).fold(1.0, f64::max);
        if b.row(i).sum().abs() > 1e-12 * scale {
            return Err(Error::InvalidParams("B rows must sum to zero".into()));
        }
    }
    let m0 = left_null_vector(b).ok_or(Error::NoNullVector)?;
    let mut out = vec![m0];
    for k in 1..=kmax {
        let shift = c * k as f64 - b;
        if shift.clone().lu().determinant().abs() <= f64::EPSILON * shift.amax().powi(n as i32) {
            return Err(Error::SingularShift(k));
        }
        let rhs = a.tr_mul(&out[k - 1]) * k as f64;
        let mk = solve_left(&shift, &rhs).ok_or(Error::SingularShift(k))?;
        out.push(mk);
    }
    Ok(out)
}
