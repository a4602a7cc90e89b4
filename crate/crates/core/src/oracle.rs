//! Simulated annotator: true labels plus complete explanation corrections
//! against a gold relevance mask.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{correction_from_gold, CorrectionSet, CorrectionSource, Example, Explanation, Instance, InstanceId, Label};
use crate::error::{CaipiError, Result};
use crate::task::{derive_seed, rng_for, GoldStandard, LabelRule};

/// The three ways a prediction and its explanation can be judged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackCase {
    /// Correct label, no wrongly relevant component.
    RightReasons,
    /// Wrong label; the explanation is not corrected.
    WrongLabel,
    /// Correct label supported by flagged components.
    WrongReasons,
}

/// An annotator's answer to one query. Human and simulated answers share this shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    /// Iteration being answered; required by the HTTP API, optional in-process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    pub label: Label,
    /// Explanation components the annotator deems irrelevant.
    #[serde(default)]
    pub flagged: BTreeSet<usize>,
}

impl Feedback {
    pub fn case(&self, predicted: Label) -> FeedbackCase {
        if self.label != predicted {
            FeedbackCase::WrongLabel
        } else if self.flagged.is_empty() {
            FeedbackCase::RightReasons
        } else {
            FeedbackCase::WrongReasons
        }
    }

    /// Correction set to act on: empty unless the label was right, otherwise
    /// the flagged components, which must belong to the explanation.
    pub fn correction(&self, expl: &Explanation, source: CorrectionSource) -> Result<CorrectionSet> {
        if self.label != expl.target_label {
            return Ok(CorrectionSet::empty(source));
        }
        CorrectionSet::for_explanation(expl, self.flagged.iter().copied(), source)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionMode {
    #[default]
    Complete,
    /// Labels only: classical active learning.
    Disabled,
}

#[derive(Clone, Debug)]
pub struct SimulatedAnnotator {
    labels: BTreeMap<InstanceId, Label>,
    rule: Option<LabelRule>,
    gold: GoldStandard,
    pub mode: CorrectionMode,
    /// Probability of leaving out each wrongly relevant component.
    pub drop_probability: f64,
    pub seed: u64,
}

impl SimulatedAnnotator {
    /// Answers from the known labels of `examples`, falling back to `rule` for
    /// unseen payloads.
    pub fn new(examples: &[Example], rule: Option<LabelRule>, gold: GoldStandard, mode: CorrectionMode) -> Self {
        SimulatedAnnotator {
            labels: examples.iter().map(|e| (e.id(), e.label)).collect(),
            rule,
            gold,
            mode,
            drop_probability: 0.0,
            seed: 0,
        }
    }

    pub fn with_drop_probability(mut self, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CaipiError::config("oracle.drop-probability", "must lie in [0, 1]"));
        }
        self.drop_probability = p;
        self.seed = seed;
        Ok(self)
    }

    pub fn true_label(&self, x: &Instance) -> Result<Label> {
        if let Some(&l) = self.labels.get(&x.id) {
            return Ok(l);
        }
        self.rule
            .and_then(|r| r.label(&x.payload))
            .ok_or_else(|| CaipiError::InvalidInput(format!("no label known for instance {}", x.id)))
    }

    pub fn gold(&self) -> &GoldStandard {
        &self.gold
    }

    pub fn respond(&self, x: &Instance, predicted: Label, expl: &Explanation) -> Result<Feedback> {
        let label = self.true_label(x)?;
        let mut flagged = BTreeSet::new();
        if label == predicted && self.mode == CorrectionMode::Complete {
            flagged = correction_from_gold(expl, &self.gold.mask_for(x)).indices;
            if self.drop_probability > 0.0 {
                let mut rng = rng_for(derive_seed(self.seed, x.id.0), 0xD0);
                flagged.retain(|_| !rng.gen_bool(self.drop_probability));
            }
        }
        Ok(Feedback {
            iteration: None,
            label,
            flagged,
        })
    }
}
