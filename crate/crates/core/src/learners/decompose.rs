use serde::{Deserialize, Serialize};

use crate::error::{CaipiError, Result};

/// Least-squares coordinates of a weight vector in the span of two reference
/// hyperplanes, plus the norm of what is left over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub alpha0: f64,
    pub alpha1: f64,
    pub residual: f64,
}

const MAX_CONDITION: f64 = 1e8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn decompose_weights(w: &[f64], w0: &[f64], w1: &[f64]) -> Result<Decomposition> {
    let d = w.len();
    for v in [w0, w1] {
        if v.len() != d {
            return Err(CaipiError::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    let (g00, g01, g11) = (dot(w0, w0), dot(w0, w1), dot(w1, w1));
    // eigenvalues of the 2x2 Gram matrix; the basis condition number is the
    // square root of their ratio
    let mean = 0.5 * (g00 + g11);
    let spread = (0.25 * (g00 - g11).powi(2) + g01 * g01).sqrt();
    let (hi, lo) = (mean + spread, mean - spread);
    let condition = if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(CaipiError::IllConditioned(condition));
    }
    let (b0, b1) = (dot(w0, w), dot(w1, w));
    let det = g00 * g11 - g01 * g01;
    let alpha0 = (g11 * b0 - g01 * b1) / det;
    let alpha1 = (g00 * b1 - g01 * b0) / det;
    let residual = w
        .iter()
        .zip(w0.iter().zip(w1))
        .map(|(x, (a, b))| (x - alpha0 * a - alpha1 * b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(Decomposition { alpha0, alpha1, residual })
}
