//! One-hidden-layer perceptron with ReLU units and a softmax output, trained
//! by mini-batch gradient descent on the cross-entropy.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{CaipiError, Result};
use crate::task::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_step")]
    pub step: f64,
    #[serde(default = "d_batch")]
    pub batch: usize,
}

fn d_hidden() -> usize {
    64
}
fn d_epochs() -> usize {
    60
}
fn d_step() -> f64 {
    0.1
}
fn d_batch() -> usize {
    32
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: d_hidden(),
            epochs: d_epochs(),
            step: d_step(),
            batch: d_batch(),
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(CaipiError::config("learner.hidden", "must be positive"));
        }
        if self.batch == 0 {
            return Err(CaipiError::config("learner.batch", "must be positive"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(CaipiError::config("learner.step", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `num_classes x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpModel {
    fn init(input_dim: usize, hidden: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0x11_9);
        let s1 = (2.0 / input_dim as f64).sqrt();
        let s2 = (2.0 / hidden as f64).sqrt();
        MlpModel {
            input_dim,
            hidden,
            num_classes,
            w1: (0..hidden * input_dim).map(|_| { let v: f64 = StandardNormal.sample(&mut rng); v } * s1).collect(),
            b1: vec![0.0; hidden],
            w2: (0..num_classes * hidden).map(|_| { let v: f64 = StandardNormal.sample(&mut rng); v } * s2).collect(),
            b2: vec![0.0; num_classes],
        }
    }

    fn hidden_activations(&self, x: &[f64], h: &mut [f64]) {
        for (k, hk) in h.iter_mut().enumerate() {
            let row = &self.w1[k * self.input_dim..(k + 1) * self.input_dim];
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[k];
            *hk = z.max(0.0);
        }
    }

    fn softmax_from_hidden(&self, h: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            *o = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.b2[c];
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    /// Class probabilities.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.num_classes];
        self.hidden_activations(x, &mut h);
        self.softmax_from_hidden(&h, &mut out);
        out
    }
}

/// Trains from a seeded initialization; the sample order is reshuffled each epoch.
pub fn fit_mlp(config: &MlpConfig, x: &[&[f64]], labels: &[Label], num_classes: usize, seed: u64) -> Result<MlpModel> {
    config.validate()?;
    let d = x.first().map(|r| r.len()).ok_or_else(|| CaipiError::InvalidInput("empty training set".into()))?;
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(CaipiError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(CaipiError::InvalidInput(format!("label {bad} out of range")));
    }
    let hdim = config.hidden;
    let mut model = MlpModel::init(d, hdim, num_classes, seed);
    let mut rng = rng_for(seed, 0x5_4FF);
    let mut order: Vec<usize> = (0..x.len()).collect();

    let mut g_w1 = vec![0.0; model.w1.len()];
    let mut g_b1 = vec![0.0; hdim];
    let mut g_w2 = vec![0.0; model.w2.len()];
    let mut g_b2 = vec![0.0; num_classes];
    let mut h = vec![0.0; hdim];
    let mut p = vec![0.0; num_classes];
    let mut dh = vec![0.0; hdim];

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch) {
            g_w1.iter_mut().for_each(|v| *v = 0.0);
            g_b1.iter_mut().for_each(|v| *v = 0.0);
            g_w2.iter_mut().for_each(|v| *v = 0.0);
            g_b2.iter_mut().for_each(|v| *v = 0.0);
            for &i in batch {
                let xi = x[i];
                model.hidden_activations(xi, &mut h);
                model.softmax_from_hidden(&h, &mut p);
                p[labels[i]] -= 1.0;
                dh.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..num_classes {
                    let pc = p[c];
                    g_b2[c] += pc;
                    let row = c * hdim;
                    for k in 0..hdim {
                        g_w2[row + k] += pc * h[k];
                        dh[k] += pc * model.w2[row + k];
                    }
                }
                for k in 0..hdim {
                    if h[k] <= 0.0 {
                        continue;
                    }
                    let g = dh[k];
                    g_b1[k] += g;
                    let row = &mut g_w1[k * d..(k + 1) * d];
                    for (gw, &v) in row.iter_mut().zip(xi) {
                        *gw += g * v;
                    }
                }
            }
            let scale = config.step / batch.len() as f64;
            for (w, g) in model.w1.iter_mut().zip(&g_w1) {
                *w -= scale * g;
            }
            for (w, g) in model.b1.iter_mut().zip(&g_b1) {
                *w -= scale * g;
            }
            for (w, g) in model.w2.iter_mut().zip(&g_w2) {
                *w -= scale * g;
            }
            for (w, g) in model.b2.iter_mut().zip(&g_b2) {
                *w -= scale * g;
            }
        }
    }
    if model.w1.iter().chain(&model.w2).any(|v| !v.is_finite()) {
        return Err(CaipiError::InvalidInput("training diverged; lower the step size".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn probabilities_sum_to_one() {
        let m = MlpModel::init(4, 8, 3, 1);
        let p = m.probabilities(&[0.1, -2.0, 3.0, 0.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn memorizes_ten_separable_points() {
        let mut rng = rng_for(7, 7);
        let x: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<Label> = x.iter().map(|r| usize::from(r[0] + r[1] > 0.0)).collect();
        let cfg = MlpConfig {
            hidden: 16,
            epochs: 500,
            step: 0.1,
            batch: 5,
        };
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let m = fit_mlp(&cfg, &rows, &labels, 2, 0).unwrap();
        for (xi, &yi) in x.iter().zip(&labels) {
            let p = m.probabilities(xi);
            assert_eq!(usize::from(p[1] > p[0]), yi);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let x = [vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let cfg = MlpConfig::default();
        let a = fit_mlp(&cfg, &rows, &[0, 1, 1], 2, 3).unwrap();
        let b = fit_mlp(&cfg, &rows, &[0, 1, 1], 2, 3).unwrap();
        assert_eq!(a, b);
    }
}
