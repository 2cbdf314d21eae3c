//! Small dense helpers on top of `nalgebra`: left solves, normalized left
//! null vectors and Laurent matrix polynomials.

use nalgebra::{DMatrix, DVector};

/// Solves the row-vector system `x · m = rhs`.
pub fn solve_left(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.transpose().lu().solve(rhs)
}

/// Left null vector of `m` normalized to unit sum.
///
/// The redundant balance equation is located with a fully pivoted LU of
/// `mᵀ` (the row that ends up holding the smallest pivot) and replaced by
/// the normalization condition.
pub fn left_null_vector(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    if n == 1 {
        return Some(DVector::from_element(1, 1.0));
    }
    let mt = m.transpose();
    let lu = mt.clone().full_piv_lu();
    // Row n-1 of P·mᵀ is the dependent one; applying P to the index vector
    // tells which original row that is.
    let mut idx = DVector::from_iterator(n, (0..n).map(|i| i as f64));
    lu.p().permute_rows(&mut idx);
    let drop = idx[n - 1] as usize;

    let mut sys = mt;
    for k in 0..n {
        sys[(drop, k)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[drop] = 1.0;
    let x = sys.lu().solve(&rhs)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Matrix-valued Laurent polynomial `Σ_k M_k z^k` for `k` in `low..low+len`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatPoly {
    pub low: i32,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl MatPoly {
    pub fn zeros(n: usize, low: i32, high: i32) -> Self {
        let len = (high - low + 1).max(1) as usize;
        MatPoly {
            low,
            coeffs: vec![DMatrix::zeros(n, n); len],
        }
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn high(&self) -> i32 {
        self.low + self.coeffs.len() as i32 - 1
    }

    /// Coefficient of `z^k`, zero outside the stored range.
    pub fn coeff(&self, k: i32) -> DMatrix<f64> {
        if k < self.low || k > self.high() {
            DMatrix::zeros(self.dim(), self.dim())
        } else {
            self.coeffs[(k - self.low) as usize].clone()
        }
    }

    pub fn coeff_mut(&mut self, k: i32) -> &mut DMatrix<f64> {
        assert!(k >= self.low && k <= self.high(), "power {k} outside storage");
        &mut self.coeffs[(k - self.low) as usize]
    }

    pub fn eval(&self, z: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (idx, c) in self.coeffs.iter().enumerate() {
            let k = self.low + idx as i32;
            out += c * z.powi(k);
        }
        out
    }

    /// Highest power with a nonzero coefficient.
    pub fn degree(&self) -> i32 {
        (self.low..=self.high())
            .rev()
            .find(|&k| self.coeffs[(k - self.low) as usize].iter().any(|&x| x != 0.0))
            .unwrap_or(self.low)
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }
}
