//! Black-box learners: fit, predict, score and active query selection.

pub mod decompose;
pub mod linear;
pub mod mlp;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Instance, Label};
use crate::error::{CaipiError, Result};
use crate::repr::Representation;

pub use decompose::{decompose_weights, Decomposition};
pub use linear::{fit_linear, LinearConfig, LinearModel, Loss, Regularizer};
pub use mlp::{fit_mlp, MlpConfig, MlpModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerConfig {
    Linear(LinearConfig),
    Mlp(MlpConfig),
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerConfig::Linear(c) => c.validate(),
            LearnerConfig::Mlp(c) => c.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Margin,
    Probability,
}

/// Per-class scores: signed margins or a probability distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub kind: ScoreKind,
    pub values: Vec<f64>,
}

impl Scores {
    /// Index of the largest score, lowest class on ties.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for (c, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = c;
            }
        }
        best
    }

    /// Distance to the decision boundary: `|m|` for binary margins, the smallest
    /// `|m_c|` for one-vs-rest, the gap between the two most likely classes for
    /// probabilities.
    pub fn margin_distance(&self) -> f64 {
        match self.kind {
            ScoreKind::Margin if self.values.len() == 2 => self.values[1].abs(),
            ScoreKind::Margin => self.values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min),
            ScoreKind::Probability => {
                let mut sorted = self.values.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                sorted[0] - sorted.get(1).copied().unwrap_or(0.0)
            }
        }
    }

    /// Confidence of the top class (the largest score).
    pub fn confidence(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
    /// Fallback when the labeled set holds a single class.
    Constant {
        label: Label,
        num_classes: usize,
        input_dim: usize,
    },
}

fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

impl Model {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Model::Constant { .. })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.input_dim(),
            Model::Mlp(m) => m.input_dim,
            Model::Constant { input_dim, .. } => *input_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Linear(m) => m.num_classes,
            Model::Mlp(m) => m.num_classes,
            Model::Constant { num_classes, .. } => *num_classes,
        }
    }

    pub fn score(&self, features: &[f64]) -> Result<Scores> {
        if features.len() != self.input_dim() {
            return Err(CaipiError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        Ok(self.score_unchecked(features))
    }

    fn score_unchecked(&self, features: &[f64]) -> Scores {
        match self {
            Model::Linear(m) => {
                let margins = m.margins(features);
                if m.config.loss == Loss::Logistic {
                    let values = if m.num_classes == 2 {
                        let p = sigmoid(margins[1]);
                        vec![1.0 - p, p]
                    } else {
                        let raw: Vec<f64> = margins.iter().map(|&v| sigmoid(v)).collect();
                        let total: f64 = raw.iter().sum();
                        raw.into_iter().map(|v| v / total).collect()
                    };
                    Scores {
                        kind: ScoreKind::Probability,
                        values,
                    }
                } else {
                    Scores {
                        kind: ScoreKind::Margin,
                        values: margins,
                    }
                }
            }
            Model::Mlp(m) => Scores {
                kind: ScoreKind::Probability,
                values: m.probabilities(features),
            },
            Model::Constant { label, num_classes, .. } => {
                let mut values = vec![0.0; *num_classes];
                values[*label] = 1.0;
                Scores {
                    kind: ScoreKind::Probability,
                    values,
                }
            }
        }
    }

    pub fn predict(&self, features: &[f64]) -> Result<Label> {
        Ok(self.score(features)?.argmax())
    }

    /// Real-valued score of class `label`, the regression target of the explainer.
    pub fn target_score(&self, features: &[f64], label: Label) -> f64 {
        self.score_unchecked(features).values[label]
    }

    /// Weight vector of the binary (or first one-vs-rest) hyperplane.
    pub fn linear_weights(&self) -> Option<&[f64]> {
        match self {
            Model::Linear(m) => Some(&m.classifiers[0].weights),
            _ => None,
        }
    }
}

/// Fits a model on the examples' features; a single observed class yields a
/// degenerate constant model.
pub fn fit(
    examples: &[Example],
    repr: &Representation,
    num_classes: usize,
    config: &LearnerConfig,
    warm: Option<&Model>,
    seed: u64,
) -> Result<Model> {
    config.validate()?;
    let first = examples
        .first()
        .ok_or_else(|| CaipiError::InvalidInput("cannot fit on an empty labeled set".into()))?;
    let features: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| repr.features(&e.instance.payload))
        .collect::<Result<_>>()?;
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(CaipiError::InvalidInput(format!("label {bad} out of range")));
    }
    if labels.iter().all(|&l| l == first.label) {
        return Ok(Model::Constant {
            label: first.label,
            num_classes,
            input_dim: features[0].len(),
        });
    }
    let rows: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    match config {
        LearnerConfig::Linear(cfg) => {
            let warm = match warm {
                Some(Model::Linear(m)) => Some(m),
                _ => None,
            };
            Ok(Model::Linear(fit_linear(cfg, &rows, &labels, num_classes, warm, seed)?))
        }
        LearnerConfig::Mlp(cfg) => Ok(Model::Mlp(fit_mlp(cfg, &rows, &labels, num_classes, seed)?)),
    }
}

/// Fraction of examples whose prediction matches the label.
pub fn accuracy(model: &Model, examples: &[Example], repr: &Representation) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for e in examples {
        if model.predict(&repr.features(&e.instance.payload)?)? == e.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// F1 of the positive class (label 1); accuracy when there are more than two classes.
pub fn predictive_f1(model: &Model, examples: &[Example], repr: &Representation) -> Result<f64> {
    if model.num_classes() != 2 {
        return accuracy(model, examples, repr);
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for e in examples {
        let p = model.predict(&repr.features(&e.instance.payload)?)?;
        match (p, e.label) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryStrategy {
    ClosestToMargin,
    LeastConfident,
    Random,
}

/// Index into `pool` of the next query. Ties go to the lowest instance id;
/// degenerate models and the random strategy draw uniformly from `rng`.
pub fn select_query(
    model: &Model,
    pool: &[Instance],
    repr: &Representation,
    strategy: QueryStrategy,
    rng: &mut impl Rng,
) -> Result<usize> {
    if pool.is_empty() {
        return Err(CaipiError::EmptyPool);
    }
    if strategy == QueryStrategy::Random || model.is_degenerate() {
        return Ok(rng.gen_range(0..pool.len()));
    }
    let keys: Vec<f64> = pool
        .par_iter()
        .map(|inst| -> Result<f64> {
            let scores = model.score(&repr.features(&inst.payload)?)?;
            Ok(match strategy {
                QueryStrategy::ClosestToMargin => scores.margin_distance(),
                _ => scores.confidence(),
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..pool.len() {
        let better = keys[i] < keys[best] || (keys[i] == keys[best] && pool[i].id < pool[best].id);
        if better {
            best = i;
        }
    }
    Ok(best)
}
