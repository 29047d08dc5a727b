//! Multinomial logistic readout over four symbols.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::Solve;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ce::SYMBOLS;
use crate::error::{Error, Result};

const CLASSES: usize = 4;
/// Rows per block in reductions; fixed so sums do not depend on thread count.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Probability,
    Moment,
    ScalarU,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub loss: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub train_error: f64,
    /// Regularized objective after each iteration, starting from the initial weights.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// `4 × (K + 1)`, bias in the last column; row `m` scores `SYMBOLS[m]`.
    pub weights: Array2<f64>,
    pub kind: FeatureKind,
    pub u_scale: Option<f64>,
    pub diagnostics: TrainingDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub l2: f64,
    /// Stop when the gradient norm of the regularized objective falls below this.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 1e-6,
            tol: 1e-8,
            max_iterations: 200,
        }
    }
}

fn class_of(symbol: i32) -> Result<usize> {
    SYMBOLS
        .iter()
        .position(|&s| s == symbol)
        .ok_or_else(|| Error::InvalidParameter(format!("label {symbol} is not a symbol")))
}

fn logits(w: &Array2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let k = x.ncols();
    let mut z = x.dot(&w.slice(s![.., ..k]).t());
    z += &w.column(k);
    z
}

/// Mean cross-entropy plus `(l2/2)‖w‖²`, its gradient and optionally its Hessian.
struct Evaluation {
    objective: f64,
    cross_entropy: f64,
    gradient: Array1<f64>,
    hessian: Option<Array2<f64>>,
}

fn evaluate(w: &Array2<f64>, x: ArrayView2<f64>, y: &[usize], l2: f64, with_hessian: bool) -> Evaluation {
    let n = x.nrows();
    let k = x.ncols();
    let p = CLASSES * (k + 1);
    let blocks: Vec<(f64, Array1<f64>, Option<Array2<f64>>)> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let rows = b * BLOCK..((b + 1) * BLOCK).min(n);
            let xb = x.slice(s![rows.clone(), ..]);
            let z = logits(w, xb);
            let mut loss = 0.0;
            let mut grad = Array1::zeros(p);
            let mut hess = with_hessian.then(|| Array2::zeros((p, p)));
            let mut xi = vec![0.0; k + 1];
            for (r, row) in z.rows().into_iter().enumerate() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let total: f64 = e.iter().sum();
                let prob: Vec<f64> = e.iter().map(|v| v / total).collect();
                let label = y[rows.start + r];
                loss += max + total.ln() - row[label];
                for (j, v) in xi.iter_mut().enumerate().take(k) {
                    *v = xb[[r, j]];
                }
                xi[k] = 1.0;
                for c in 0..CLASSES {
                    let resid = prob[c] - if c == label { 1.0 } else { 0.0 };
                    for j in 0..=k {
                        grad[c * (k + 1) + j] += resid * xi[j];
                    }
                }
                if let Some(h) = hess.as_mut() {
                    for c in 0..CLASSES {
                        for d in 0..CLASSES {
                            let coef = prob[c] * (if c == d { 1.0 } else { 0.0 } - prob[d]);
                            if coef == 0.0 {
                                continue;
                            }
                            for a in 0..=k {
                                let ca = coef * xi[a];
                                let row = c * (k + 1) + a;
                                for bb in 0..=k {
                                    h[[row, d * (k + 1) + bb]] += ca * xi[bb];
                                }
                            }
                        }
                    }
                }
            }
            (loss, grad, hess)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = Array1::zeros(p);
    let mut hess = with_hessian.then(|| Array2::zeros((p, p)));
    for (l, g, h) in blocks {
        loss += l;
        grad += &g;
        if let (Some(acc), Some(h)) = (hess.as_mut(), h) {
            *acc += &h;
        }
    }
    let inv_n = 1.0 / n as f64;
    let flat = Array1::from_iter(w.iter().cloned());
    let cross_entropy = loss * inv_n;
    let objective = cross_entropy + 0.5 * l2 * flat.dot(&flat);
    let gradient = grad * inv_n + &(&flat * l2);
    let hessian = hess.map(|h| {
        let mut h = h * inv_n;
        for i in 0..p {
            h[[i, i]] += l2;
        }
        h
    });
    Evaluation {
        objective,
        cross_entropy,
        gradient,
        hessian,
    }
}

fn validate(features: ArrayView2<f64>, labels: &[i32]) -> Result<Vec<usize>> {
    if features.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features"));
    }
    let y: Vec<usize> = labels.iter().map(|&l| class_of(l)).collect::<Result<_>>()?;
    for c in 0..CLASSES {
        if !y.contains(&c) {
            return Err(Error::InvalidParameter(format!("no training sample of symbol {}", SYMBOLS[c])));
        }
    }
    Ok(y)
}

/// Damped Newton iterations with Armijo backtracking, from `initial` weights
/// or zero.
pub fn fit_softmax_readout_from(
    features: ArrayView2<f64>,
    labels: &[i32],
    kind: FeatureKind,
    opts: &FitOptions,
    initial: Option<Array2<f64>>,
) -> Result<ReadoutModel> {
    if !(opts.tol > 0.0) || !(opts.l2 >= 0.0) {
        return Err(Error::InvalidParameter("tol must be positive and l2 non-negative".into()));
    }
    let y = validate(features, labels)?;
    let k = features.ncols();
    let mut w = initial.unwrap_or_else(|| Array2::zeros((CLASSES, k + 1)));
    if w.dim() != (CLASSES, k + 1) {
        return Err(Error::Dimension("initial weights have the wrong shape".into()));
    }
    let mut eval = evaluate(&w, features, &y, opts.l2, true);
    let mut history = vec![eval.objective];
    let mut iterations = 0;
    while eval.gradient.dot(&eval.gradient).sqrt() >= opts.tol {
        if iterations == opts.max_iterations {
            return Err(Error::NoConvergence(format!(
                "gradient norm {:.3e} after {iterations} Newton iterations",
                eval.gradient.dot(&eval.gradient).sqrt()
            )));
        }
        iterations += 1;
        let h = eval.hessian.take().expect("hessian requested");
        let mut dir = h
            .solve(&eval.gradient)
            .map_err(|e| Error::LinearAlgebra(format!("Newton system: {e}")))?;
        let mut slope = -eval.gradient.dot(&dir);
        if !(slope < 0.0) || dir.iter().any(|v| !v.is_finite()) {
            dir = eval.gradient.clone();
            slope = -eval.gradient.dot(&dir);
        }
        let mut t = 1.0;
        let next = loop {
            let cand = &w - &(dir.clone().into_shape_with_order((CLASSES, k + 1)).expect("shape") * t);
            let e = evaluate(&cand, features, &y, opts.l2, false);
            if e.objective <= eval.objective + 1e-4 * t * slope || t < 1e-12 {
                break (cand, e);
            }
            t *= 0.5;
        };
        if next.1.objective > eval.objective {
            break;
        }
        w = next.0;
        eval = evaluate(&w, features, &y, opts.l2, true);
        history.push(eval.objective);
    }
    let pred = predict_classes(&w, features);
    let wrong = pred.iter().zip(&y).filter(|(a, b)| a != b).count();
    Ok(ReadoutModel {
        weights: w,
        kind,
        u_scale: None,
        diagnostics: TrainingDiagnostics {
            loss: eval.cross_entropy,
            gradient_norm: eval.gradient.dot(&eval.gradient).sqrt(),
            iterations,
            train_error: wrong as f64 / y.len() as f64,
            objective_history: history,
        },
    })
}

pub fn fit_softmax_readout(
    features: ArrayView2<f64>,
    labels: &[i32],
    kind: FeatureKind,
    opts: &FitOptions,
) -> Result<ReadoutModel> {
    fit_softmax_readout_from(features, labels, kind, opts, None)
}

/// Logistic regression on the scalar input alone.
pub fn fit_logistic_on_u(u: &[f64], labels: &[i32], opts: &FitOptions) -> Result<ReadoutModel> {
    let x = Array2::from_shape_vec((u.len(), 1), u.to_vec()).expect("column");
    fit_softmax_readout(x.view(), labels, FeatureKind::ScalarU, opts)
}

fn predict_classes(w: &Array2<f64>, x: ArrayView2<f64>) -> Vec<usize> {
    logits(w, x)
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for c in 1..CLASSES {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

impl ReadoutModel {
    pub fn width(&self) -> usize {
        self.weights.ncols() - 1
    }

    /// Argmax symbol per row; ties go to the earlier symbol in `−3, −1, 1, 3`.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<i32>> {
        if features.ncols() != self.width() {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {}",
                self.width(),
                features.ncols()
            )));
        }
        Ok(predict_classes(&self.weights, features)
            .into_iter()
            .map(|c| SYMBOLS[c])
            .collect())
    }

    pub fn predict_u(&self, u: &[f64]) -> Result<Vec<i32>> {
        let x = Array2::from_shape_vec((u.len(), 1), u.to_vec()).expect("column");
        self.predict(x.view())
    }

    /// Mean cross-entropy on the given data.
    pub fn cross_entropy(&self, features: ArrayView2<f64>, labels: &[i32]) -> Result<f64> {
        let y: Vec<usize> = labels.iter().map(|&l| class_of(l)).collect::<Result<_>>()?;
        Ok(evaluate(&self.weights, features, &y, 0.0, false).cross_entropy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Gradient of the regularized objective at `weights`, for checking.
pub fn objective_gradient(weights: &Array2<f64>, features: ArrayView2<f64>, labels: &[i32], l2: f64) -> Result<(f64, Array1<f64>)> {
    let y: Vec<usize> = labels.iter().map(|&l| class_of(l)).collect::<Result<_>>()?;
    let e = evaluate(weights, features, &y, l2, false);
    Ok((e.objective, e.gradient))
}
