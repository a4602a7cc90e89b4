//! Regularized linear classifiers.
//!
//! Objective per binary problem, labels `y in {-1, +1}`:
//!
//! ```text
//! (1/n) sum_i loss(y_i (<w, x_i> + b)) + lambda * R(w)
//! ```
//!
//! with `R(w) = ||w||_1` or `||w||^2 / 2`. The proximal solver leaves the bias
//! unpenalized unless `penalize_bias` is set. Squared hinge and logistic losses
//! are solved with accelerated proximal gradient (FISTA with adaptive restart).
//! The plain hinge with an L2 penalty is solved in the dual by coordinate
//! descent, the bias entering as an extra constant feature.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{CaipiError, Result};
use crate::task::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Hinge,
    SquaredHinge,
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LinearConfig {
    pub loss: Loss,
    pub regularizer: Regularizer,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Relative objective change that ends a fit.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Value of the constant feature carrying the bias in the dual hinge solver.
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
    /// Whether the proximal solver applies the penalty to the bias as well.
    #[serde(default)]
    pub penalize_bias: bool,
}

fn default_lambda() -> f64 {
    0.01
}
fn default_tol() -> f64 {
    1e-4
}
fn default_max_iter() -> usize {
    5_000
}
fn default_bias_scale() -> f64 {
    10.0
}

impl LinearConfig {
    pub fn new(loss: Loss, regularizer: Regularizer, lambda: f64) -> Self {
        LinearConfig {
            loss,
            regularizer,
            lambda,
            tol: default_tol(),
            max_iter: default_max_iter(),
            bias_scale: default_bias_scale(),
            penalize_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(CaipiError::config("learner.lambda", "must be positive and finite"));
        }
        if !(self.tol > 0.0) {
            return Err(CaipiError::config("learner.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(CaipiError::config("learner.max-iter", "must be positive"));
        }
        if self.loss == Loss::Hinge && self.regularizer == Regularizer::L1 {
            return Err(CaipiError::config(
                "learner.loss",
                "the hinge loss is only supported with the l2 regularizer; use squared-hinge for l1",
            ));
        }
        Ok(())
    }
}

/// A single hyperplane `<w, x> + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryLinear {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BinaryLinear {
    pub fn zeros(dim: usize) -> Self {
        BinaryLinear {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Binary model (one hyperplane for class 1) or one-vs-rest (one per class).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classifiers: Vec<BinaryLinear>,
    pub num_classes: usize,
    pub config: LinearConfig,
    /// Iterations used by the last fit of each classifier.
    #[serde(default)]
    pub iterations: Vec<usize>,
}

impl LinearModel {
    pub fn input_dim(&self) -> usize {
        self.classifiers[0].weights.len()
    }

    /// Per-class margins; binary models return `[-m, m]`.
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        if self.num_classes == 2 {
            let m = self.classifiers[0].margin(x);
            vec![-m, m]
        } else {
            self.classifiers.iter().map(|c| c.margin(x)).collect()
        }
    }
}

/// Sparse row-major design matrix.
struct Csr {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    cols: usize,
}

impl Csr {
    fn from_rows(rows: &[&[f64]], cols: usize) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            indptr,
            indices,
            values,
            cols,
        }
    }

    fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e].iter().zip(&self.values[s..e]).map(|(&j, &v)| (j as usize, v))
    }

    fn dot_row(&self, i: usize, w: &[f64]) -> f64 {
        self.row(i).map(|(j, v)| w[j] * v).sum()
    }
}

fn loss_value(loss: Loss, m: f64) -> f64 {
    match loss {
        Loss::Hinge => (1.0 - m).max(0.0),
        Loss::SquaredHinge => {
            let s = (1.0 - m).max(0.0);
            s * s
        }
        Loss::Logistic => {
            if m > 0.0 {
                (-m).exp().ln_1p()
            } else {
                -m + m.exp().ln_1p()
            }
        }
    }
}

fn loss_derivative(loss: Loss, m: f64) -> f64 {
    match loss {
        Loss::Hinge => {
            if m < 1.0 {
                -1.0
            } else {
                0.0
            }
        }
        Loss::SquaredHinge => -2.0 * (1.0 - m).max(0.0),
        Loss::Logistic => -1.0 / (1.0 + m.exp()),
    }
}

fn curvature_bound(loss: Loss) -> f64 {
    match loss {
        Loss::Hinge | Loss::SquaredHinge => 2.0,
        Loss::Logistic => 0.25,
    }
}

fn penalty(reg: Regularizer, lambda: f64, w: &[f64]) -> f64 {
    match reg {
        Regularizer::L1 => lambda * w.iter().map(|v| v.abs()).sum::<f64>(),
        Regularizer::L2 => 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>(),
    }
}

/// Regularized objective of a hyperplane on labels `y in {-1, +1}`.
pub fn objective(config: &LinearConfig, x: &[&[f64]], y: &[f64], model: &BinaryLinear) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| loss_value(config.loss, yi * model.margin(xi)))
        .sum::<f64>()
        / n;
    let mut p = penalty(config.regularizer, config.lambda, &model.weights);
    if config.penalize_bias {
        p += penalty(config.regularizer, config.lambda, &[model.bias]);
    }
    data + p
}

/// Largest squared singular value of `[X, 1] / sqrt(n)` by power iteration.
fn spectral_estimate(a: &Csr) -> f64 {
    let n = a.rows();
    let d = a.cols;
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut est = 0.0;
    let mut u = vec![0.0; n];
    for _ in 0..30 {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = a.dot_row(i, &v[..d]) + v[d];
        }
        let mut next = vec![0.0; d + 1];
        for (i, &ui) in u.iter().enumerate() {
            for (j, val) in a.row(i) {
                next[j] += val * ui;
            }
            next[d] += ui;
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        est = norm;
        for (vi, ni) in v.iter_mut().zip(&next) {
            *vi = ni / norm;
        }
    }
    est / n as f64
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// FISTA with backtracking and function-value restart on smooth losses.
fn fit_proximal(config: &LinearConfig, a: &Csr, y: &[f64], warm: Option<&BinaryLinear>) -> (BinaryLinear, usize) {
    let n = a.rows();
    let d = a.cols;
    let nf = n as f64;
    let lambda = config.lambda;
    let l2 = if config.regularizer == Regularizer::L2 { lambda } else { 0.0 };
    let l1 = if config.regularizer == Regularizer::L1 { lambda } else { 0.0 };
    let pd = if config.penalize_bias { d + 1 } else { d };

    // Parameters stored as [w..., b].
    let mut x: Vec<f64> = match warm {
        Some(m) if m.weights.len() == d => m.weights.iter().copied().chain([m.bias]).collect(),
        _ => vec![0.0; d + 1],
    };
    let margins_of = |p: &[f64]| -> Vec<f64> { (0..n).map(|i| a.dot_row(i, &p[..d]) + p[d]).collect() };
    let smooth = |m: &[f64], p: &[f64]| -> f64 {
        let data: f64 = m.iter().zip(y).map(|(mi, yi)| loss_value(config.loss, yi * mi)).sum::<f64>() / nf;
        data + 0.5 * l2 * p[..pd].iter().map(|v| v * v).sum::<f64>()
    };
    let l1_term = |p: &[f64]| l1 * p[..pd].iter().map(|v| v.abs()).sum::<f64>();

    let mut lip = (curvature_bound(config.loss) * spectral_estimate(a) + l2).max(1e-12);
    let mut m_x = margins_of(&x);
    let mut f_x = smooth(&m_x, &x) + l1_term(&x);
    let mut x_prev = x.clone();
    let mut m_prev = m_x.clone();
    let mut t = 1.0f64;
    let mut calm = 0;
    let mut iter = 0;
    let mut grad = vec![0.0; d + 1];
    while iter < config.max_iter {
        iter += 1;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        let yv: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a + beta * (a - b)).collect();
        let m_y: Vec<f64> = m_x.iter().zip(&m_prev).map(|(a, b)| a + beta * (a - b)).collect();
        let f_y = smooth(&m_y, &yv);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let coef = y[i] * loss_derivative(config.loss, y[i] * m_y[i]) / nf;
            if coef == 0.0 {
                continue;
            }
            for (j, v) in a.row(i) {
                grad[j] += coef * v;
            }
            grad[d] += coef;
        }
        for j in 0..pd {
            grad[j] += l2 * yv[j];
        }
        let (cand, m_cand, f_cand) = loop {
            let step = 1.0 / lip;
            let mut cand: Vec<f64> = yv.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            if l1 > 0.0 {
                for c in cand[..pd].iter_mut() {
                    *c = soft_threshold(*c, step * l1);
                }
            }
            let m_cand = margins_of(&cand);
            let f_smooth = smooth(&m_cand, &cand);
            let diff: Vec<f64> = cand.iter().zip(&yv).map(|(c, p)| c - p).collect();
            let lin: f64 = diff.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let quad: f64 = diff.iter().map(|v| v * v).sum();
            if f_smooth <= f_y + lin + 0.5 * lip * quad + 1e-12 * f_y.abs().max(1.0) {
                let f = f_smooth + l1_term(&cand);
                break (cand, m_cand, f);
            }
            lip *= 2.0;
        };
        if f_cand > f_x {
            if beta == 0.0 {
                // a plain proximal step no longer descends
                break;
            }
            // restart momentum from the current iterate
            t = 1.0;
            x_prev = x.clone();
            m_prev = m_x.clone();
            continue;
        }
        let rel = (f_x - f_cand) / f_x.abs().max(1e-12);
        x_prev = std::mem::replace(&mut x, cand);
        m_prev = std::mem::replace(&mut m_x, m_cand);
        f_x = f_cand;
        t = t_next;
        if rel < config.tol {
            calm += 1;
            if calm >= 10 {
                break;
            }
        } else {
            calm = 0;
        }
    }
    let bias = x[d];
    x.truncate(d);
    (BinaryLinear { weights: x, bias }, iter)
}

/// Dual coordinate descent for the L2-regularized hinge loss.
fn fit_dual_hinge(config: &LinearConfig, a: &Csr, y: &[f64], seed: u64) -> (BinaryLinear, usize) {
    let n = a.rows();
    let d = a.cols;
    let c = 1.0 / (config.lambda * n as f64);
    let bscale = config.bias_scale;
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let q: Vec<f64> = (0..n)
        .map(|i| a.row(i).map(|(_, v)| v * v).sum::<f64>() + bscale * bscale)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, 0xD0A1);
    let mut epochs = 0;
    let eps = config.tol * 10.0;
    while epochs < config.max_iter {
        epochs += 1;
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = y[i] * (a.dot_row(i, &w[..d]) + w[d] * bscale) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                if delta != 0.0 {
                    for (j, v) in a.row(i) {
                        w[j] += delta * v;
                    }
                    w[d] += delta * bscale;
                }
            }
        }
        if pg_max - pg_min < eps {
            break;
        }
    }
    let bias = w[d] * bscale;
    w.truncate(d);
    (BinaryLinear { weights: w, bias }, epochs)
}

/// Fits one hyperplane on `y in {-1, +1}`.
pub fn fit_binary(
    config: &LinearConfig,
    x: &[&[f64]],
    y: &[f64],
    warm: Option<&BinaryLinear>,
    seed: u64,
) -> Result<(BinaryLinear, usize)> {
    config.validate()?;
    let d = x.first().map(|r| r.len()).ok_or_else(|| CaipiError::InvalidInput("empty training set".into()))?;
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(CaipiError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let a = Csr::from_rows(x, d);
    Ok(match config.loss {
        Loss::Hinge => fit_dual_hinge(config, &a, y, seed),
        Loss::SquaredHinge | Loss::Logistic => fit_proximal(config, &a, y, warm),
    })
}

/// Fits a binary or one-vs-rest model; `warm` seeds the proximal solver.
pub fn fit_linear(
    config: &LinearConfig,
    x: &[&[f64]],
    labels: &[Label],
    num_classes: usize,
    warm: Option<&LinearModel>,
    seed: u64,
) -> Result<LinearModel> {
    if num_classes < 2 {
        return Err(CaipiError::InvalidInput("need at least two classes".into()));
    }
    let targets: Vec<Label> = if num_classes == 2 { vec![1] } else { (0..num_classes).collect() };
    let mut classifiers = Vec::with_capacity(targets.len());
    let mut iterations = Vec::with_capacity(targets.len());
    for (k, &target) in targets.iter().enumerate() {
        let y: Vec<f64> = labels.iter().map(|&l| if l == target { 1.0 } else { -1.0 }).collect();
        let warm_k = warm.and_then(|m| m.classifiers.get(k));
        let (clf, it) = fit_binary(config, x, &y, warm_k, seed.wrapping_add(k as u64))?;
        classifiers.push(clf);
        iterations.push(it);
    }
    Ok(LinearModel {
        classifiers,
        num_classes,
        config: config.clone(),
        iterations,
    })
}
