//! Persistent-retrial reduction, Okubo canonical form and the resolvent
//! decomposition of the standardized Okubo matrix.
//!
//! With `ᾱ = 0` the last equation of the simplified system expresses `p_s`
//! through the other components, leaving an `s`-dimensional system
//! `p̃'(z)V(z) = p̃(z)U(z)` whose last column carries the coefficient `κ(z)`.
//! Without orbit feedback (`θ̃ = 0`) and with every free-server arrival
//! accepted, `κ = ρ̃` is constant and `V(z) = zI − T` with
//! `T = p̄I + pT₊ + ρ̃L`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genfun::{build_system, PolyMatrixSystem, Recovery, Variant};
use crate::linalg::MatPoly;
use crate::model::{Kappa, ModelParams};

const RANK_TOL: f64 = 1e-10;

/// `L` (ones in the last column), `T₊` (ones on the superdiagonal) and
/// `L₁` (ones in the last column except the last row), all `s × s`.
pub fn structure_matrices(s: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut l = DMatrix::zeros(s, s);
    let mut tp = DMatrix::zeros(s, s);
    let mut l1 = DMatrix::zeros(s, s);
    for i in 0..s {
        l[(i, s - 1)] = 1.0;
        if i + 1 < s {
            tp[(i, i + 1)] = 1.0;
            l1[(i, s - 1)] = 1.0;
        }
    }
    (l, tp, l1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub s: usize,
    pub system: PolyMatrixSystem,
    pub kappa: Kappa,
}

impl ReducedSystem {
    pub fn recovery(&self) -> &Recovery {
        self.system
            .recovery
            .as_ref()
            .expect("reduced system carries its recovery row")
    }
}

/// Eliminates `p_s` from the persistent system.
///
/// `V = V_{s−1} − κL` and `U = U_{s−1} − κ(λ̃p̃_a L + θ̃μ̃ l₁)`, where the
/// `s−1` subscript denotes the leading `s × s` block of the full system and
/// `l₁` has `0, 1, …, s−1` in its last column.
pub fn reduce_persistent(params: &ModelParams) -> Result<ReducedSystem> {
    params.ensure_valid()?;
    if params.ab > 0.0 {
        return Err(Error::NotPersistent);
    }
    let s = params.s;
    let denom = params.lambda_ob() + s as f64 * params.tht * params.mu;
    if !(denom > 0.0) {
        return Err(Error::NoOrbitInflow);
    }
    let full = build_system(params, Variant::Full)?;
    let nu = params.nu;
    let kappa = Kappa {
        k0: s as f64 * params.mu * params.thb / denom,
        k1: s as f64 * params.mu * params.tht / denom,
    };
    let a: Vec<f64> = (0..s)
        .map(|i| (params.lambda * params.pt_a + i as f64 * params.mu * params.tht) / nu)
        .collect();
    let last = s - 1;

    let mut v = MatPoly::zeros(s, 0, 1);
    let mut u = MatPoly::zeros(s, 0, 1);
    for k in 0..=1 {
        *v.coeff_mut(k) = full.v.coeff(k).view((0, 0), (s, s)) / nu;
        *u.coeff_mut(k) = full.u.coeff(k).view((0, 0), (s, s)) / nu;
    }
    for (k, kc) in [(0, kappa.k0), (1, kappa.k1)] {
        for i in 0..s {
            v.coeff_mut(k)[(i, last)] -= kc;
            // a_i is constant, so κ(z)·a_i stays linear in z
            u.coeff_mut(k)[(i, last)] -= kc * a[i];
        }
    }
    let recovery = Recovery {
        d: vec![1.0; s],
        a,
        denom: denom / nu,
    };
    Ok(ReducedSystem {
        s,
        system: PolyMatrixSystem {
            variant: Variant::Reduced,
            dim: s,
            v,
            u,
            inhomogeneous: None,
            scale: 1.0,
            recovery: Some(recovery),
        },
        kappa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eigen {
    pub value: f64,
    pub multiplicity: usize,
    /// Jordan block sizes, largest first.
    pub jordan_sizes: Vec<usize>,
}

/// `p'(z)(zI − T) = p(z)U` with constant `T` and `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct OkuboSystem {
    pub s: usize,
    pub t: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub pb: f64,
    pub p: f64,
    /// Last-column coefficient of `T` (`ρ̃`, or `ρ̄ = ρ̃/p` once standardized).
    pub rho_tilde: f64,
    /// `ρ` (or `pρ` once standardized).
    pub rho: f64,
    pub lambda_tilde: f64,
    pub standardized: bool,
}

/// Okubo form of a persistent model without orbit feedback, with all
/// free-server arrivals accepted.
pub fn okubo_form(params: &ModelParams) -> Result<OkuboSystem> {
    params.ensure_valid()?;
    if params.ab > 0.0 {
        return Err(Error::NotOkubo("needs persistent retrials"));
    }
    if params.tht != 0.0 {
        return Err(Error::NotOkubo("kappa depends on z when tht > 0"));
    }
    if params.pt_a != 0.0 || params.p_a != 1.0 {
        return Err(Error::NotOkubo(
            "U depends on z unless every free-server arrival is served",
        ));
    }
    let red = reduce_persistent(params)?;
    if red.kappa.k1 != 0.0 {
        return Err(Error::NotOkubo("kappa depends on z"));
    }
    let v = &red.system.v;
    let u = &red.system.u;
    if u.degree() > 0 {
        return Err(Error::NotOkubo("U depends on z"));
    }
    let s = red.s;
    let mut identity = v.coeff(1);
    identity.fill_diagonal(0.0);
    if identity.iter().any(|&x| x != 0.0) {
        return Err(Error::NotOkubo("V is not of the form zI - T"));
    }
    let d = params.derive()?;
    Ok(OkuboSystem {
        s,
        t: -v.coeff(0),
        u: u.coeff(0),
        pb: params.pb,
        p: params.p,
        rho_tilde: red.kappa.k0,
        rho: d.rho,
        lambda_tilde: d.lt,
        standardized: params.pb == 0.0 && params.p == 1.0,
    })
}

fn rank(m: &DMatrix<f64>) -> usize {
    let tol = RANK_TOL * m.amax().max(1.0);
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&x| x > tol)
        .count()
}

impl OkuboSystem {
    pub fn system(&self) -> PolyMatrixSystem {
        let s = self.s;
        let mut v = MatPoly::zeros(s, 0, 1);
        *v.coeff_mut(0) = -&self.t;
        *v.coeff_mut(1) = DMatrix::identity(s, s);
        let mut u = MatPoly::zeros(s, 0, 0);
        *u.coeff_mut(0) = self.u.clone();
        PolyMatrixSystem {
            variant: Variant::Okubo,
            dim: s,
            v,
            u,
            inhomogeneous: None,
            scale: 1.0,
            recovery: None,
        }
    }

    /// `N = T − p̄I`, which satisfies `N^s = ρ̃N^{s−1}`.
    pub fn shifted(&self) -> DMatrix<f64> {
        &self.t - DMatrix::identity(self.s, self.s) * self.pb
    }

    /// `‖N^s − ρ̃N^{s−1}‖_max / max(1, ‖N^s‖_max)`.
    pub fn power_identity_defect(&self) -> f64 {
        let n = self.shifted();
        let prev = n.pow(self.s as u32 - 1);
        let top = &prev * &n;
        (&top - &prev * self.rho_tilde).amax() / top.amax().max(1.0)
    }

    /// Eigenvalues `p̄` and `p̄ + ρ̃` read off the triangular `T`, with
    /// Jordan sizes from the ranks of `(T − λI)^k`.
    ///
    /// When the copies of an eigenvalue are contiguous on the diagonal the
    /// rank tests run on that diagonal block, which is similar to the
    /// restriction of `T` to the generalized eigenspace. This keeps powers
    /// of the other eigenvalue from swamping the tolerance.
    pub fn spectrum(&self) -> Vec<Eigen> {
        let s = self.s;
        let mut values: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in 0..s {
            let x = self.t[(i, i)];
            match values.iter_mut().find(|(v, _)| (v - x).abs() <= RANK_TOL) {
                Some(e) => e.1.push(i),
                None => values.push((x, vec![i])),
            }
        }
        values
            .into_iter()
            .map(|(value, pos)| {
                let multiplicity = pos.len();
                let contiguous = pos.windows(2).all(|w| w[1] == w[0] + 1);
                let block = if contiguous {
                    self.t.view((pos[0], pos[0]), (multiplicity, multiplicity)).into_owned()
                } else {
                    self.t.clone()
                };
                let n = block.nrows();
                let shifted = &block - DMatrix::identity(n, n) * value;
                let mut ranks = vec![n];
                let mut pw = DMatrix::identity(n, n);
                for _ in 0..=multiplicity {
                    pw = &pw * &shifted;
                    ranks.push(rank(&pw).min(*ranks.last().unwrap()));
                }
                // blocks of size ≥ k: r_{k−1} − r_k
                let at_least: Vec<usize> = (1..ranks.len()).map(|k| ranks[k - 1] - ranks[k]).collect();
                let mut sizes = Vec::new();
                for k in (1..=at_least.len()).rev() {
                    let exact = at_least[k - 1].saturating_sub(at_least.get(k).copied().unwrap_or(0));
                    sizes.extend(std::iter::repeat_n(k, exact));
                }
                Eigen {
                    value,
                    multiplicity,
                    jordan_sizes: sizes,
                }
            })
            .collect()
    }

    /// Largest row-sum of `U + λ̃E`, zero for an Erlang-loss generator with
    /// the loss at the last state.
    pub fn erlang_defect(&self) -> f64 {
        let mut m = self.u.clone();
        m[(self.s - 1, self.s - 1)] += self.lambda_tilde;
        m.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }
}

/// Change of variable `y = (z − p̄)/p`, giving `p̄ = 0`, `p = 1`.
pub fn standardize(sys: &OkuboSystem) -> Result<OkuboSystem> {
    if !(sys.p > 0.0) {
        return Err(Error::PureOrbit);
    }
    if sys.standardized {
        return Ok(sys.clone());
    }
    Ok(OkuboSystem {
        t: sys.shifted() / sys.p,
        pb: 0.0,
        p: 1.0,
        rho_tilde: sys.rho_tilde / sys.p,
        rho: sys.rho * sys.p,
        standardized: true,
        ..sys.clone()
    })
}

/// `U(yI − T)⁻¹ = (y − ρ̄)⁻¹D + Σ_{m=1}^{s−1} y^{−m}D_m` for the standardized
/// Okubo matrix. The pole at `y = 0` has order `s − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventDecomposition {
    pub rho_bar: f64,
    /// Residue at `y = ρ̄`.
    pub d: DMatrix<f64>,
    /// `d_m[m − 1]` multiplies `y^{−m}`.
    pub d_m: Vec<DMatrix<f64>>,
    pub t: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl ResolventDecomposition {
    pub fn d1(&self) -> &DMatrix<f64> {
        &self.d_m[0]
    }

    pub fn d2(&self) -> &DMatrix<f64> {
        &self.d_m[1]
    }

    /// Poincaré rank at `y = 0` (pole order minus one) and at `y = ρ̄`.
    pub fn poincare_ranks(&self) -> (usize, usize) {
        let order = self.d_m.iter().rposition(|m| m.amax() > 0.0).map_or(0, |k| k + 1);
        (order.saturating_sub(1), 0)
    }

    /// `(yI − T)⁻¹` from the finite expansion terminated by `T^s = ρ̄T^{s−1}`.
    pub fn resolvent(&self, y: f64) -> DMatrix<f64> {
        let s = self.t.nrows();
        let mut out = DMatrix::zeros(s, s);
        let mut pw = DMatrix::identity(s, s);
        for k in 0..s - 1 {
            out += &pw * y.powi(-(k as i32) - 1);
            pw = &pw * &self.t;
        }
        out + pw * (y.powi(-(s as i32 - 1)) / (y - self.rho_bar))
    }

    /// Magnitude of the terms of [`Self::eval`] before they cancel:
    /// `‖D‖/|y − ρ̄| + Σ_m |y|^{−m}(‖UT^{m−1}‖ + ρ̄^{m−s}‖UT^{s−1}‖)`, max
    /// norm. Rounding error of the partial-fraction form is relative to it.
    pub fn condition_scale(&self, y: f64) -> f64 {
        let s = self.t.nrows();
        let mut pw = self.u.clone();
        let mut parts = Vec::with_capacity(s);
        for _ in 0..s {
            parts.push(pw.amax());
            pw = &pw * &self.t;
        }
        let top = parts[s - 1];
        (1..s)
            .map(|m| {
                let a = parts[m - 1] + self.rho_bar.powi(m as i32 - s as i32) * top;
                a * y.abs().powi(-(m as i32))
            })
            .sum::<f64>()
            + self.d.amax() / (y - self.rho_bar).abs()
    }

    /// Partial-fraction form of `U(yI − T)⁻¹`.
    pub fn eval(&self, y: f64) -> DMatrix<f64> {
        let mut out = &self.d / (y - self.rho_bar);
        for (m, dm) in self.d_m.iter().enumerate() {
            out += dm * y.powi(-(m as i32) - 1);
        }
        out
    }
}

pub fn resolvent_decomposition(sys: &OkuboSystem) -> Result<ResolventDecomposition> {
    let s = sys.s;
    if s < 3 {
        return Err(Error::Dimension { got: s, min: 3 });
    }
    let st = standardize(sys)?;
    let rb = st.rho_tilde;
    let t = st.t.clone();
    let mut powers = vec![DMatrix::identity(s, s)];
    for k in 1..s {
        powers.push(&powers[k - 1] * &t);
    }
    let top = &powers[s - 1];
    let d = &st.u * top * rb.powi(-(s as i32 - 1));
    let d_m = (1..s)
        .map(|m| &st.u * (&powers[m - 1] - top * rb.powi(m as i32 - s as i32)))
        .collect();
    Ok(ResolventDecomposition {
        rho_bar: rb,
        d,
        d_m,
        t,
        u: st.u,
    })
}

/// The two matrices of the explicit three-server resolvent
/// `(yI − T)⁻¹ = y⁻¹I + y⁻²M₁ + (y(y − ρ̄))⁻¹M₂`, written in `ξ = 1/ρ̄`.
pub fn three_server_display(xi: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let m1 = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -(1.0 + xi), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let m2 = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0,
            0.0,
            xi + 1.0 + 1.0 / xi,
            0.0,
            0.0,
            1.0 + 1.0 / xi,
            0.0,
            0.0,
            1.0 / xi,
        ],
    );
    (m1, m2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn okubo_params(s: usize, lambda: f64, pb: f64) -> ModelParams {
        let mut m = ModelParams::classic(lambda, 1.0, 0.8, s);
        m.p = 1.0 - pb;
        m.pb = pb;
        m
    }

    #[test]
    fn single_server_reduction() {
        let mut m = ModelParams::classic(0.5, 1.0, 1.25, 1);
        m.p = 0.8;
        m.pb = 0.2;
        m.pt_a = 0.3;
        m.p_a = 0.7;
        m.tht = 0.1;
        m.thb = 0.9;
        m.theta = 0.0;
        let red = reduce_persistent(&m).unwrap();
        let d = m.derive().unwrap();
        let lt = 0.5 / 1.25;
        for z in [0.0, 0.4, 2.0] {
            let k = red.kappa.eval(z);
            assert!((k - d.kappa.eval(z)).abs() < 1e-15);
            let v = red.system.v_at(z)[(0, 0)];
            let u = red.system.u_at(z)[(0, 0)];
            assert!((v - (z - 0.2 - k)).abs() < 1e-14);
            assert!((u - lt * (z * 0.3 - 1.0 - k * 0.3)).abs() < 1e-14);
        }
        assert_eq!(red.system.u.degree(), 1);
    }

    #[test]
    fn two_server_reduction_matrices() {
        let m = okubo_params(2, 0.6, 0.0);
        let red = reduce_persistent(&m).unwrap();
        let d = m.derive().unwrap();
        let (lt, mt, rt) = (d.lt, d.mt, d.rho_tilde);
        let v = red.system.v_at(0.7);
        let e = DMatrix::from_row_slice(2, 2, &[0.7, -1.0 - rt, 0.0, 0.7 - rt]);
        assert!((v - e).amax() < 1e-14);
        let u = red.system.u_at(0.7);
        let e = DMatrix::from_row_slice(2, 2, &[-lt, lt, mt, -lt - mt]);
        assert!((u - e).amax() < 1e-14);
        assert!((red.kappa.k0 - rt).abs() < 1e-15 && red.kappa.k1 == 0.0);
    }

    #[test]
    fn reduction_errors() {
        let mut m = okubo_params(2, 0.6, 0.0);
        m.ab = 0.1;
        m.alpha = 0.9;
        assert_eq!(reduce_persistent(&m).unwrap_err().code(), "not-persistent");
        let mut m = okubo_params(2, 0.6, 0.0);
        m.at_0 = 0.0;
        m.pb_a = 0.0;
        assert_eq!(reduce_persistent(&m).unwrap_err().code(), "no-orbit-inflow");
    }

    #[test]
    fn structure_identities() {
        for s in 1..8 {
            let (l, tp, l1) = structure_matrices(s);
            assert_eq!(&l * &l, l);
            assert_eq!(&l * &tp, DMatrix::zeros(s, s));
            assert_eq!(&tp * &l, l1);
        }
    }

    #[test]
    fn okubo_matrices_and_spectrum() {
        let m = okubo_params(3, 2.0, 0.2);
        let ok = okubo_form(&m).unwrap();
        // λ = 2, s = 3, μ = 1: ρ = 2/3, ρ̃ = 1.5
        assert!((ok.rho_tilde - 1.5).abs() < 1e-15);
        let spec = ok.spectrum();
        assert_eq!(spec.len(), 2);
        assert!((spec[0].value - 0.2).abs() < 1e-15 && spec[0].multiplicity == 2);
        assert_eq!(spec[0].jordan_sizes, vec![2]);
        assert!((spec[1].value - 1.7).abs() < 1e-15 && spec[1].multiplicity == 1);
        assert!(ok.power_identity_defect() < 1e-12);
        assert!(ok.erlang_defect() < 1e-14);
    }

    #[test]
    fn okubo_preconditions() {
        let mut m = okubo_params(3, 1.0, 0.0);
        m.tht = 0.1;
        m.thb = 0.9;
        assert_eq!(okubo_form(&m).unwrap_err().code(), "not-okubo");
    }

    #[test]
    fn standardization() {
        let mut m = okubo_params(3, 1.5, 0.5);
        m.mu = 1.0; // ρ = 0.5, ρ̃ = 2; with p = 0.5 the scale is p·ρ̃ = 1
        m.lambda = 1.5 * 2.0;
        let ok = okubo_form(&m).unwrap();
        let rt = ok.rho_tilde;
        let st = standardize(&ok).unwrap();
        assert!((st.rho_tilde - rt / 0.5).abs() < 1e-15);
        let e = st.spectrum();
        assert!(e[0].value.abs() < 1e-15);
        assert!((e[1].value - rt / 0.5).abs() < 1e-14);
        assert_eq!(standardize(&st).unwrap(), st);
        assert!((st.rho - m.derive().unwrap().xi).abs() < 1e-15);
        let mut orbit = ok.clone();
        orbit.p = 0.0;
        assert_eq!(standardize(&orbit).unwrap_err().code(), "pure-orbit");
    }

    #[test]
    fn resolvent_matches_inverse() {
        for s in 3..9 {
            let ok = okubo_form(&okubo_params(s, 0.4 * s as f64, 0.3)).unwrap();
            let dec = resolvent_decomposition(&ok).unwrap();
            assert_eq!(dec.poincare_ranks().0, s - 2);
            for y in [0.37, 5.1] {
                let shifted = DMatrix::identity(s, s) * y - &dec.t;
                let direct = shifted.solve_upper_triangular(&DMatrix::identity(s, s)).unwrap();
                let full = &dec.u * &direct;
                let err = (dec.eval(y) - &full).amax();
                assert!(err < 1e-10 * full.amax(), "s={s} y={y} err={err:e}");
                assert!(err < 1e-14 * dec.condition_scale(y));
            }
            for c in 0..s - 1 {
                assert!(dec.d.column(c).iter().all(|&x| x == 0.0));
            }
        }
        let ok = okubo_form(&okubo_params(2, 1.0, 0.0)).unwrap();
        assert_eq!(resolvent_decomposition(&ok).unwrap_err().code(), "dimension");
    }

    #[test]
    fn three_server_display_matches() {
        let ok = okubo_form(&okubo_params(3, 1.8, 0.0)).unwrap();
        let dec = resolvent_decomposition(&ok).unwrap();
        let xi = 1.0 / dec.rho_bar;
        let (m1, m2) = three_server_display(xi);
        assert!((&m1 + &m2 - &dec.t).amax() < 1e-14);
        assert!((&dec.t * &dec.t / dec.rho_bar - &m2).amax() < 1e-14);
        for y in [0.37, 2.0, 5.1] {
            let disp = DMatrix::identity(3, 3) / y + &m1 / (y * y) + &m2 / (y * (y - dec.rho_bar));
            assert!((disp - dec.resolvent(y)).amax() < 1e-13);
        }
    }
}
