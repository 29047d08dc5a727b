//! Polynomial fits in `u ∈ [−1, 1]` of matrix-valued functions.

use ndarray::{Array2, Zip};

use crate::linalg::{CMatrix, C64};

/// First-kind Chebyshev nodes `cos(π(i + ½)/n)`.
pub fn nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
        .collect()
}

/// Equispaced check points including both endpoints.
pub fn check_points(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n as f64 - 1.0))
        .collect()
}

/// Monomial coefficients of `T_0 … T_{n-1}`: `table[k][m]` is the coefficient of `u^m` in `T_k`.
pub fn chebyshev_monomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut row = vec![0.0; n];
        match k {
            0 => row[0] = 1.0,
            1 => row[1] = 1.0,
            _ => {
                for m in 0..n {
                    let shifted = if m > 0 { 2.0 * t[k - 1][m - 1] } else { 0.0 };
                    row[m] = shifted - t[k - 2][m];
                }
            }
        }
        t.push(row);
    }
    t
}

/// Interpolant of a function sampled at `nodes(values.len())`.
#[derive(Debug, Clone)]
pub struct ChebyshevFit {
    coeffs: Vec<CMatrix>,
}

impl ChebyshevFit {
    pub fn from_samples(values: &[CMatrix]) -> Self {
        let n = values.len();
        assert!(n > 0, "at least one node");
        let shape = values[0].dim();
        let mut coeffs = Vec::with_capacity(n);
        for k in 0..n {
            let mut c = Array2::<C64>::zeros(shape);
            for (i, v) in values.iter().enumerate() {
                // T_k(cos θ_i) = cos(k θ_i)
                let theta = std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                let w = (k as f64 * theta).cos() * 2.0 / n as f64;
                Zip::from(&mut c).and(v).for_each(|a, &b| *a += b * w);
            }
            if k == 0 {
                c.mapv_inplace(|z| z * 0.5);
            }
            coeffs.push(c);
        }
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn chebyshev_coefficients(&self) -> &[CMatrix] {
        &self.coeffs
    }

    /// Clenshaw evaluation.
    pub fn eval(&self, u: f64) -> CMatrix {
        let n = self.coeffs.len();
        let shape = self.coeffs[0].dim();
        let mut b1 = CMatrix::zeros(shape);
        let mut b2 = CMatrix::zeros(shape);
        for k in (1..n).rev() {
            let mut b0 = &self.coeffs[k] - &b2;
            b0.scaled_add(C64::new(2.0 * u, 0.0), &b1);
            b2 = b1;
            b1 = b0;
        }
        let mut out = &self.coeffs[0] - &b2;
        out.scaled_add(C64::new(u, 0.0), &b1);
        out
    }

    /// Coefficients of `u^0 … u^{n-1}`.
    pub fn monomial(&self) -> Vec<CMatrix> {
        let n = self.coeffs.len();
        let table = chebyshev_monomial_table(n);
        let shape = self.coeffs[0].dim();
        (0..n)
            .map(|m| {
                let mut a = CMatrix::zeros(shape);
                for (k, c) in self.coeffs.iter().enumerate().skip(m) {
                    let t = table[k][m];
                    if t != 0.0 {
                        a.scaled_add(C64::new(t, 0.0), c);
                    }
                }
                a
            })
            .collect()
    }
}

/// Horner evaluation of `Σ_k u^k a_k`.
pub fn eval_monomial(coeffs: &[CMatrix], u: f64) -> CMatrix {
    let mut acc = coeffs.last().expect("nonempty").clone();
    for c in coeffs.iter().rev().skip(1) {
        acc.mapv_inplace(|z| z * u);
        acc = acc + c;
    }
    acc
}

/// Largest entry of `|a − b|`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0f64, |m, &x, &y| m.max((x - y).norm()))
}
