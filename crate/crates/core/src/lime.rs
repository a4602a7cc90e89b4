//! Local surrogate explanations.
//!
//! Neighbours of an instance are drawn by switching present components off at
//! random. The model is scored on each neighbour, neighbours are weighted by an
//! exponential kernel on their normalized Hamming distance, and a weighted
//! linear model with at most `k` nonzero coefficients is fit by forward
//! stepwise selection. Repeating this `runs` times and keeping the most
//! frequently selected components stabilizes the support.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Explanation, Instance, Label};
use crate::error::{CaipiError, Result};
use crate::learners::Model;
use crate::repr::Representation;
use crate::task::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LimeConfig {
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_flip")]
    pub flip_probability: f64,
    #[serde(default = "d_width")]
    pub kernel_width: f64,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_samples() -> usize {
    5000
}
fn d_flip() -> f64 {
    0.5
}
fn d_width() -> f64 {
    0.25
}
fn d_k() -> usize {
    5
}
fn d_runs() -> usize {
    10
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            samples: d_samples(),
            flip_probability: d_flip(),
            kernel_width: d_width(),
            k: d_k(),
            runs: d_runs(),
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 100 {
            return Err(CaipiError::config("explainer.samples", "must be at least 100"));
        }
        if !(self.flip_probability > 0.0 && self.flip_probability < 1.0) {
            return Err(CaipiError::config("explainer.flip-probability", "must lie in (0, 1)"));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(CaipiError::config("explainer.kernel-width", "must be positive"));
        }
        if self.k == 0 {
            return Err(CaipiError::config("explainer.k", "must be at least 1"));
        }
        if self.runs == 0 {
            return Err(CaipiError::config("explainer.runs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Proximity of a neighbour that switched off `flipped` of `d` components.
pub fn kernel(flipped: usize, d: usize, width: f64) -> f64 {
    let dist = flipped as f64 / d as f64;
    (-(dist * dist) / (width * width)).exp()
}

/// Perturbed neighbours of one instance. Only components present in the
/// instance can vary, so the design is stored over those (`active`).
#[derive(Clone, Debug)]
pub struct Neighborhood {
    pub dim: usize,
    pub active: Vec<usize>,
    /// `kept[s][a]`: whether `active[a]` is still present in sample `s`.
    pub kept: Vec<Vec<bool>>,
    pub targets: Vec<f64>,
    pub proximity: Vec<f64>,
}

impl Neighborhood {
    /// Full-length interpretable vector of sample `s`.
    pub fn z(&self, s: usize) -> Vec<u8> {
        let mut z = vec![0; self.dim];
        for (a, &j) in self.active.iter().enumerate() {
            z[j] = u8::from(self.kept[s][a]);
        }
        z
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Draws `config.samples` neighbours and evaluates `score` on each mapped-back input.
pub fn sample_neighborhood<F>(
    instance: &Instance,
    repr: &Representation,
    baseline: u16,
    config: &LimeConfig,
    seed: u64,
    score: F,
) -> Neighborhood
where
    F: Fn(&[f64]) -> f64,
{
    let d = instance.dim();
    let active: Vec<usize> = instance.present_components().collect();
    let mut rng = rng_for(seed, 0x11_3E);
    let mut z = instance.interp.clone();
    let mut kept = Vec::with_capacity(config.samples);
    let mut targets = Vec::with_capacity(config.samples);
    let mut proximity = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let mut row = Vec::with_capacity(active.len());
        let mut flipped = 0;
        for &j in &active {
            let keep = !rng.gen_bool(config.flip_probability);
            z[j] = u8::from(keep);
            flipped += usize::from(!keep);
            row.push(keep);
        }
        let input = repr.perturbed_features(instance, &z, baseline, &mut rng);
        targets.push(score(&input));
        proximity.push(kernel(flipped, d, config.kernel_width));
        kept.push(row);
    }
    Neighborhood {
        dim: d,
        active,
        kept,
        targets,
        proximity,
    }
}

/// Weighted normal equations of a neighbourhood: column 0 is the intercept,
/// column `a + 1` is active component `a`.
struct Normal {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    yy: f64,
}

impl Normal {
    fn of(n: &Neighborhood) -> Self {
        let m = n.active.len() + 1;
        let mut gram = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        let mut yy = 0.0;
        let mut on = Vec::with_capacity(m);
        for s in 0..n.len() {
            let (w, y) = (n.proximity[s], n.targets[s]);
            on.clear();
            on.push(0);
            on.extend(n.kept[s].iter().enumerate().filter(|(_, &k)| k).map(|(a, _)| a + 1));
            for (p, &a) in on.iter().enumerate() {
                rhs[a] += w * y;
                for &b in &on[..=p] {
                    gram[(a, b)] += w;
                }
            }
            yy += w * y * y;
        }
        gram.fill_upper_triangle_with_lower_triangle();
        Normal { gram, rhs, yy }
    }

    fn sub(&self, cols: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let g = DMatrix::from_fn(cols.len(), cols.len(), |r, c| self.gram[(cols[r], cols[c])]);
        let b = DVector::from_fn(cols.len(), |r, _| self.rhs[cols[r]]);
        (g, b)
    }

    /// Weighted least squares on `cols`; `None` when singular.
    fn solve(&self, cols: &[usize]) -> Option<(DVector<f64>, f64)> {
        let (g, b) = self.sub(cols);
        let coef = g.cholesky()?.solve(&b);
        let rss = self.yy - coef.dot(&b);
        Some((coef, rss))
    }
}

/// Relative pivot below which a candidate column counts as linearly dependent
/// on the already selected ones.
const PIVOT_TOL: f64 = 1e-9;

/// Forward stepwise selection of at most `k` components (restricted to
/// `allowed` when given), then weighted least squares on the chosen support.
fn forward_select(n: &Neighborhood, k: usize, allowed: Option<&[usize]>, label: Label, seed: u64) -> Explanation {
    let normal = Normal::of(n);
    let candidates: Vec<usize> = match allowed {
        Some(list) => n
            .active
            .iter()
            .enumerate()
            .filter(|(_, j)| list.contains(j))
            .map(|(a, _)| a + 1)
            .collect(),
        None => (1..=n.active.len()).collect(),
    };
    let mut selected = vec![0usize];
    let mut rank_deficient = false;
    while selected.len() <= k && selected.len() <= candidates.len() {
        let (g, b) = normal.sub(&selected);
        let Some(chol) = g.cholesky() else {
            break;
        };
        let coef = chol.solve(&b);
        let mut best: Option<(usize, f64)> = None;
        let mut any_dependent = false;
        for &c in &candidates {
            if selected.contains(&c) {
                continue;
            }
            let gc = DVector::from_fn(selected.len(), |r, _| normal.gram[(selected[r], c)]);
            let v = chol.solve(&gc);
            let pivot = normal.gram[(c, c)] - gc.dot(&v);
            if pivot <= PIVOT_TOL * normal.gram[(c, c)].max(f64::MIN_POSITIVE) {
                any_dependent = true;
                continue;
            }
            let resid = normal.rhs[c] - gc.dot(&coef);
            let gain = resid * resid / pivot;
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        match best {
            Some((c, _)) => selected.push(c),
            None => {
                rank_deficient |= any_dependent;
                break;
            }
        }
    }
    let Some((coef, _)) = normal.solve(&selected) else {
        let mut e = Explanation::empty(k, label);
        e.seed = seed;
        e.rank_deficient = true;
        return e;
    };
    let mut components: Vec<(usize, f64)> = selected[1..]
        .iter()
        .enumerate()
        .map(|(p, &c)| (n.active[c - 1], coef[p + 1]))
        .filter(|&(_, w)| w != 0.0 && w.is_finite())
        .collect();
    components.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    if let Some(list) = allowed {
        rank_deficient |= components.len() < list.len().min(k);
    }
    Explanation {
        components,
        intercept: coef[0],
        k,
        target_label: label,
        seed,
        rank_deficient,
    }
}

/// Sparse surrogate with at most `k` components fit to a neighbourhood.
pub fn fit_sparse_surrogate(n: &Neighborhood, k: usize, label: Label, seed: u64) -> Explanation {
    forward_select(n, k, None, label, seed)
}

/// Weighted residual sum of squares of the least-squares fit on `support`
/// (plus intercept); `None` if the design is singular.
pub fn weighted_rss(n: &Neighborhood, support: &[usize]) -> Option<f64> {
    let normal = Normal::of(n);
    let mut cols = vec![0];
    for j in support {
        cols.push(n.active.iter().position(|a| a == j)? + 1);
    }
    normal.solve(&cols).map(|(_, rss)| rss)
}

/// Stabilized explanation of label `label` for an arbitrary scoring function.
pub fn explain_with<F>(
    instance: &Instance,
    label: Label,
    repr: &Representation,
    baseline: u16,
    config: &LimeConfig,
    score: F,
) -> Result<Explanation>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let d = instance.dim();
    if config.k > d {
        return Err(CaipiError::config("explainer.k", format!("k={} exceeds {d} components", config.k)));
    }
    let run = |r: usize| {
        let seed = derive_seed(config.seed, r as u64);
        let n = sample_neighborhood(instance, repr, baseline, config, seed, &score);
        fit_sparse_surrogate(&n, config.k, label, seed)
    };
    if config.runs == 1 {
        let mut e = run(0);
        e.seed = config.seed;
        return Ok(e);
    }
    let fits: Vec<Explanation> = (0..config.runs).into_par_iter().map(run).collect();
    // component -> (times selected, summed |w|)
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for e in &fits {
        for &(j, w) in &e.components {
            let v = votes.entry(j).or_insert((0, 0.0));
            v.0 += 1;
            v.1 += w.abs();
        }
    }
    let mut ranked: Vec<(usize, usize, f64)> = votes.into_iter().map(|(j, (c, s))| (j, c, s / c as f64)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    let kept: Vec<usize> = ranked.iter().take(config.k).map(|r| r.0).collect();
    let seed = derive_seed(config.seed, config.runs as u64);
    let n = sample_neighborhood(instance, repr, baseline, config, seed, &score);
    let mut e = forward_select(&n, config.k, Some(&kept), label, config.seed);
    e.rank_deficient |= fits.iter().any(|f| f.rank_deficient);
    Ok(e)
}

/// Explains `model`'s score for `label` on `instance`.
pub fn explain(
    model: &Model,
    instance: &Instance,
    label: Label,
    repr: &Representation,
    baseline: u16,
    config: &LimeConfig,
) -> Result<Explanation> {
    let expected = model.input_dim();
    let got = repr.feature_dim(&instance.payload)?;
    if expected != got {
        return Err(CaipiError::DimensionMismatch { expected, got });
    }
    if label >= model.num_classes() {
        return Err(CaipiError::InvalidInput(format!("label {label} out of range")));
    }
    explain_with(instance, label, repr, baseline, config, |x| model.target_score(x, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Document, Payload};

    fn full_doc(d: usize) -> Instance {
        let doc = Document::new(d, (0..d as u32).collect()).unwrap();
        Instance::new(Payload::Document(doc), &Representation::BagOfWords).unwrap()
    }

    fn linear_score(weights: Vec<f64>, bias: f64) -> impl Fn(&[f64]) -> f64 + Sync {
        move |x: &[f64]| weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias
    }

    #[test]
    fn kernel_at_zero_distance_is_one() {
        assert_eq!(kernel(0, 10, 0.25), 1.0);
        assert!(kernel(10, 10, 0.25) > 0.0);
    }

    #[test]
    fn tiny_flip_probability_leaves_instance_intact() {
        let x = full_doc(6);
        let cfg = LimeConfig {
            samples: 200,
            flip_probability: 1e-12,
            ..LimeConfig::default()
        };
        let n = sample_neighborhood(&x, &Representation::BagOfWords, 0, &cfg, 1, |_| 0.0);
        for s in 0..n.len() {
            assert_eq!(n.z(s), x.interp);
            assert_eq!(n.proximity[s], 1.0);
        }
    }

    #[test]
    fn flips_follow_binomial_mean() {
        let x = full_doc(8);
        let cfg = LimeConfig {
            samples: 4000,
            ..LimeConfig::default()
        };
        let n = sample_neighborhood(&x, &Representation::BagOfWords, 0, &cfg, 3, |_| 0.0);
        let flips: usize = n.kept.iter().map(|r| r.iter().filter(|k| !**k).count()).sum();
        let mean = flips as f64 / n.len() as f64;
        assert!((mean - 4.0).abs() <= 0.2, "mean flips {mean}");
    }

    #[test]
    fn absent_components_never_vary() {
        let doc = Document::new(6, vec![1, 4]).unwrap();
        let x = Instance::new(Payload::Document(doc), &Representation::BagOfWords).unwrap();
        let cfg = LimeConfig {
            samples: 300,
            ..LimeConfig::default()
        };
        let n = sample_neighborhood(&x, &Representation::BagOfWords, 0, &cfg, 0, |_| 0.0);
        assert_eq!(n.active, vec![1, 4]);
        assert!((0..n.len()).all(|s| n.z(s).iter().enumerate().all(|(j, &v)| v == 0 || j == 1 || j == 4)));
    }

    #[test]
    fn exactly_sparse_target_is_recovered() {
        let x = full_doc(5);
        let cfg = LimeConfig {
            samples: 500,
            ..LimeConfig::default()
        };
        let n = sample_neighborhood(&x, &Representation::BagOfWords, 0, &cfg, 9, linear_score(vec![0.0, 0.0, 3.0, 0.0, 0.0], -1.0));
        let e = fit_sparse_surrogate(&n, 1, 1, 0);
        assert_eq!(e.indices().into_iter().collect::<Vec<_>>(), vec![2]);
        assert!((e.components[0].1 - 3.0).abs() < 1e-9);
        assert!((e.intercept + 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_support_dominates_sparse() {
        let x = full_doc(6);
        let cfg = LimeConfig {
            samples: 500,
            ..LimeConfig::default()
        };
        let score = |v: &[f64]| v[0] * v[1] + 0.5 * v[2] - v[5] * v[3];
        let n = sample_neighborhood(&x, &Representation::BagOfWords, 0, &cfg, 4, score);
        let full: Vec<usize> = (0..6).collect();
        let rss_full = weighted_rss(&n, &full).unwrap();
        for k in 1..6 {
            let e = fit_sparse_surrogate(&n, k, 1, 0);
            let rss = weighted_rss(&n, &e.indices().into_iter().collect::<Vec<_>>()).unwrap();
            assert!(rss_full <= rss + 1e-9);
            assert!(e.components.len() <= k);
        }
    }

    #[test]
    fn duplicate_columns_flag_rank_deficiency() {
        // every sample keeps both components or neither
        let n = Neighborhood {
            dim: 2,
            active: vec![0, 1],
            kept: (0..50).map(|s| vec![s % 2 == 0, s % 2 == 0]).collect(),
            targets: (0..50).map(|s| if s % 2 == 0 { 2.0 } else { 0.0 }).collect(),
            proximity: vec![1.0; 50],
        };
        let e = fit_sparse_surrogate(&n, 2, 0, 0);
        assert_eq!(e.components.len(), 1);
        assert!(e.rank_deficient);
    }

    #[test]
    fn single_run_equals_one_fit() {
        let x = full_doc(8);
        let cfg = LimeConfig {
            samples: 400,
            runs: 1,
            k: 2,
            seed: 17,
            ..LimeConfig::default()
        };
        let score = linear_score(vec![1.0, -2.0, 0.3, 0.0, 0.5, 0.0, 0.1, 0.2], 0.0);
        let e = explain_with(&x, 1, &Representation::BagOfWords, 0, &cfg, &score).unwrap();
        let n = sample_neighborhood(&x, &Representation::BagOfWords, 0, &cfg, derive_seed(17, 0), &score);
        let single = fit_sparse_surrogate(&n, 2, 1, 17);
        assert_eq!(e, single);
    }

    #[test]
    fn explanations_are_deterministic_and_bounded() {
        let x = full_doc(10);
        let cfg = LimeConfig {
            samples: 300,
            k: 3,
            seed: 5,
            ..LimeConfig::default()
        };
        let score = linear_score((0..10).map(|i| i as f64 - 4.5).collect(), 0.2);
        let a = explain_with(&x, 1, &Representation::BagOfWords, 0, &cfg, &score).unwrap();
        let b = explain_with(&x, 1, &Representation::BagOfWords, 0, &cfg, &score).unwrap();
        assert_eq!(a, b);
        assert!(a.components.len() <= 3);
        a.validate(10).unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let x = full_doc(8);
        for cfg in [
            LimeConfig { samples: 10, ..LimeConfig::default() },
            LimeConfig { flip_probability: 1.0, ..LimeConfig::default() },
            LimeConfig { kernel_width: 0.0, ..LimeConfig::default() },
            LimeConfig { k: 9, ..LimeConfig::default() },
            LimeConfig { runs: 0, ..LimeConfig::default() },
        ] {
            assert!(explain_with(&x, 0, &Representation::BagOfWords, 0, &cfg, |_| 0.0).is_err());
        }
    }
}
