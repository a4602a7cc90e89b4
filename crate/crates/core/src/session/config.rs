//! Declarative experiment configuration (TOML) and dataset materialization.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corrections::{CounterexampleStrategy, StrategyKind};
use crate::datasets::colors::generate_colors;
use crate::datasets::decoy::{generate_decoy, DecoyBase, DecoySpec};
use crate::datasets::text::{load_text, synthetic_text_task, SyntheticCorpusSpec};
use crate::datasets::toy::generate_toy_corners;
use crate::error::{CaipiError, Result};
use crate::learners::{LearnerConfig, QueryStrategy};
use crate::lime::LimeConfig;
use crate::oracle::CorrectionMode;
use crate::task::{derive_seed, ColorsRule, TaskData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "kebab-case",
    rename_all_fields = "kebab-case",
    deny_unknown_fields
)]
pub enum DatasetConfig {
    Colors {
        #[serde(default = "d_colors_n")]
        n: usize,
        /// 0: four equal corners, 1: three distinct top-middle pixels.
        #[serde(default)]
        rule: usize,
    },
    ToyCorners {
        #[serde(default = "d_toy_n")]
        n: usize,
    },
    Decoy {
        #[serde(default = "d_decoy_n")]
        n_train: usize,
        #[serde(default = "d_decoy_n")]
        n_test: usize,
        #[serde(default = "d_noise")]
        noise: u16,
        #[serde(default = "d_patch")]
        patch: usize,
        /// External IDX files instead of the synthetic shapes.
        #[serde(default)]
        idx: Option<IdxFiles>,
    },
    Text {
        /// Directory with one subdirectory of documents per class. When absent
        /// the bundled synthetic corpus is generated.
        #[serde(default)]
        corpus: Option<PathBuf>,
        #[serde(default = "d_docs")]
        docs_per_class: usize,
        #[serde(default = "d_class_words")]
        class_words: usize,
        #[serde(default = "d_neutral_words")]
        neutral_words: usize,
        #[serde(default = "d_skewed_words")]
        skewed_words: usize,
    },
}

fn d_colors_n() -> usize {
    1000
}
fn d_toy_n() -> usize {
    200
}
fn d_decoy_n() -> usize {
    1000
}
fn d_noise() -> u16 {
    90
}
fn d_patch() -> usize {
    4
}
fn d_docs() -> usize {
    SyntheticCorpusSpec::default().docs_per_class
}
fn d_class_words() -> usize {
    SyntheticCorpusSpec::default().class_words
}
fn d_neutral_words() -> usize {
    SyntheticCorpusSpec::default().neutral_words
}
fn d_skewed_words() -> usize {
    SyntheticCorpusSpec::default().skewed_words
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct QueryConfig {
    #[serde(default = "d_strategy")]
    pub strategy: QueryStrategy,
}

fn d_strategy() -> QueryStrategy {
    QueryStrategy::ClosestToMargin
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig { strategy: d_strategy() }
    }
}

/// Explainer settings; `k` falls back to the dataset's default sparsity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExplainerConfig {
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_flip")]
    pub flip_probability: f64,
    #[serde(default = "d_width")]
    pub kernel_width: f64,
    #[serde(default = "d_runs")]
    pub runs: usize,
    #[serde(default)]
    pub k: Option<usize>,
}

fn d_samples() -> usize {
    LimeConfig::default().samples
}
fn d_flip() -> f64 {
    LimeConfig::default().flip_probability
}
fn d_width() -> f64 {
    LimeConfig::default().kernel_width
}
fn d_runs() -> usize {
    LimeConfig::default().runs
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            samples: d_samples(),
            flip_probability: d_flip(),
            kernel_width: d_width(),
            runs: d_runs(),
            k: None,
        }
    }
}

impl ExplainerConfig {
    pub fn lime(&self, k: usize, seed: u64) -> LimeConfig {
        LimeConfig {
            samples: self.samples,
            flip_probability: self.flip_probability,
            kernel_width: self.kernel_width,
            k,
            runs: self.runs,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SessionConfig {
    /// Iteration budget T.
    #[serde(default = "d_budget")]
    pub budget: usize,
    /// Iterations without corrections at the start.
    #[serde(default = "d_burn_in")]
    pub burn_in: usize,
    /// Initial labeled examples per class.
    #[serde(default = "d_seed_per_class")]
    pub seed_per_class: usize,
    /// Test-set explanation quality is measured every this many iterations.
    #[serde(default = "d_cadence")]
    pub test_cadence: usize,
    /// Test instances explained at each checkpoint; 0 disables the measurement.
    #[serde(default = "d_subsample")]
    pub test_subsample: usize,
    #[serde(default)]
    pub corrections: CorrectionMode,
    /// Probability that the simulated annotator forgets a wrongly relevant component.
    #[serde(default)]
    pub drop_probability: f64,
    /// Stop once the test metric has been flat for 25 iterations.
    #[serde(default)]
    pub stop_on_convergence: bool,
}

fn d_budget() -> usize {
    100
}
fn d_burn_in() -> usize {
    10
}
fn d_seed_per_class() -> usize {
    2
}
fn d_cadence() -> usize {
    20
}
fn d_subsample() -> usize {
    100
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            budget: d_budget(),
            burn_in: d_burn_in(),
            seed_per_class: d_seed_per_class(),
            test_cadence: d_cadence(),
            test_subsample: d_subsample(),
            corrections: CorrectionMode::Complete,
            drop_probability: 0.0,
            stop_on_convergence: false,
        }
    }
}

/// A whole experiment: one file names dataset, learner, strategies, budget and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_folds")]
    pub folds: usize,
    pub dataset: DatasetConfig,
    pub learner: LearnerConfig,
    #[serde(default)]
    pub query: QueryConfig,
    #[serde(default)]
    pub explainer: ExplainerConfig,
    #[serde(default)]
    pub session: SessionConfig,
    pub corrections: CounterexampleStrategy,
}

fn d_folds() -> usize {
    1
}

/// Field named in a deserializer message such as "missing field `learner`".
fn field_of(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

/// Sparsity used when an instance is explained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KPolicy {
    Fixed(usize),
    /// Number of gold components present, at least one.
    GoldPresent,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let message = e.to_string();
            let field = field_of(e.message()).unwrap_or_else(|| "config".into());
            CaipiError::Config { field, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CaipiError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(CaipiError::config("folds", "must be at least 1"));
        }
        self.learner.validate()?;
        self.corrections.validate()?;
        self.k_policy()?;
        let e = &self.explainer;
        self.explainer.lime(e.k.unwrap_or(1).max(1), 0).validate()?;
        if e.k == Some(0) {
            return Err(CaipiError::config("explainer.k", "must be at least 1"));
        }
        let s = &self.session;
        if s.seed_per_class == 0 {
            return Err(CaipiError::config("session.seed-per-class", "must be at least 1"));
        }
        if s.test_cadence == 0 {
            return Err(CaipiError::config("session.test-cadence", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&s.drop_probability) {
            return Err(CaipiError::config("session.drop-probability", "must lie in [0, 1]"));
        }
        let text = matches!(self.dataset, DatasetConfig::Text { .. });
        if text != (self.corrections.kind == StrategyKind::RemoveTokens) {
            return Err(CaipiError::config(
                "corrections.kind",
                "remove-tokens applies to text datasets and only remove-tokens does",
            ));
        }
        match &self.dataset {
            DatasetConfig::Colors { n, rule } => {
                if ColorsRule::from_index(*rule).is_none() {
                    return Err(CaipiError::config("dataset.rule", "must be 0 or 1"));
                }
                if *n == 0 {
                    return Err(CaipiError::config("dataset.n", "must be positive"));
                }
            }
            DatasetConfig::ToyCorners { n } if *n == 0 => {
                return Err(CaipiError::config("dataset.n", "must be positive"));
            }
            DatasetConfig::Decoy { patch, .. } if *patch == 0 => {
                return Err(CaipiError::config("dataset.patch", "must be positive"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Explanation sparsity: explicit `explainer.k`, else the dataset default
    /// (4 for rule 0, 3 for rule 1, 2 for the toy task, 4 for decoy, the number
    /// of gold words present for text).
    pub fn k_policy(&self) -> Result<KPolicy> {
        if let Some(k) = self.explainer.k {
            return Ok(KPolicy::Fixed(k));
        }
        Ok(match &self.dataset {
            DatasetConfig::Colors { rule, .. } => match ColorsRule::from_index(*rule) {
                Some(ColorsRule::Corners) => KPolicy::Fixed(4),
                Some(ColorsRule::TopMiddle) => KPolicy::Fixed(3),
                None => return Err(CaipiError::config("dataset.rule", "must be 0 or 1")),
            },
            DatasetConfig::ToyCorners { .. } => KPolicy::Fixed(2),
            DatasetConfig::Decoy { .. } => KPolicy::Fixed(4),
            DatasetConfig::Text { .. } => KPolicy::GoldPresent,
        })
    }

    /// Decoy generator spec and seed; fails for other datasets.
    pub fn decoy_spec(&self) -> Result<(DecoySpec, u64)> {
        match &self.dataset {
            DatasetConfig::Decoy {
                n_train,
                n_test,
                noise,
                patch,
                idx,
            } => {
                let base = match idx {
                    Some(f) => DecoyBase::Idx {
                        train_images: f.train_images.clone(),
                        train_labels: f.train_labels.clone(),
                        test_images: f.test_images.clone(),
                        test_labels: f.test_labels.clone(),
                        limit: f.limit,
                    },
                    None => DecoyBase::Shapes {
                        n_train: *n_train,
                        n_test: *n_test,
                        noise: *noise,
                    },
                };
                Ok((DecoySpec { base, patch: *patch }, derive_seed(self.seed, 1)))
            }
            _ => Err(CaipiError::config("dataset.kind", "must be `decoy`")),
        }
    }

    /// Generates or loads the dataset.
    pub fn load_data(&self) -> Result<TaskData> {
        let seed = derive_seed(self.seed, 1);
        match &self.dataset {
            DatasetConfig::Colors { n, rule } => {
                let rule = ColorsRule::from_index(*rule).ok_or_else(|| CaipiError::config("dataset.rule", "must be 0 or 1"))?;
                generate_colors(*n, rule, seed)
            }
            DatasetConfig::ToyCorners { n } => generate_toy_corners(*n, seed),
            DatasetConfig::Decoy { .. } => {
                let (spec, seed) = self.decoy_spec()?;
                Ok(generate_decoy(&spec, seed)?.into_task_data())
            }
            DatasetConfig::Text {
                corpus,
                docs_per_class,
                class_words,
                neutral_words,
                skewed_words,
            } => {
                let task = match corpus {
                    Some(dir) => load_text(dir, seed)?,
                    None => synthetic_text_task(
                        &SyntheticCorpusSpec {
                            docs_per_class: *docs_per_class,
                            class_words: *class_words,
                            neutral_words: *neutral_words,
                            skewed_words: *skewed_words,
                        },
                        seed,
                    )?,
                };
                Ok(task.into_task_data())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COLORS: &str = r#"
seed = 3
folds = 2

[dataset]
kind = "colors"
n = 200
rule = 1

[learner]
kind = "linear"
loss = "squared-hinge"
regularizer = "l1"
lambda = 0.02

[explainer]
samples = 500

[session]
budget = 30
burn-in = 5

[corrections]
kind = "enumerate-alternatives"
copies = 3
"#;

    #[test]
    fn parses_and_resolves_defaults() {
        let cfg = ExperimentConfig::from_toml_str(COLORS).unwrap();
        assert_eq!(cfg.k_policy().unwrap(), KPolicy::Fixed(3));
        assert_eq!(cfg.explainer.runs, 10);
        assert_eq!(cfg.session.seed_per_class, 2);
        assert_eq!(cfg.query.strategy, QueryStrategy::ClosestToMargin);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn missing_learner_names_the_field() {
        let text = COLORS.replace("[learner]\nkind = \"linear\"\nloss = \"squared-hinge\"\nregularizer = \"l1\"\nlambda = 0.02\n", "");
        match ExperimentConfig::from_toml_str(&text) {
            Err(CaipiError::Config { field, .. }) => assert_eq!(field, "learner"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = COLORS.replace("budget = 30", "budget = 30\nbudgett = 1");
        match ExperimentConfig::from_toml_str(&text) {
            Err(CaipiError::Config { field, .. }) => assert_eq!(field, "budgett"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_name_fields() {
        for (from, to, field) in [
            ("rule = 1", "rule = 2", "dataset.rule"),
            ("copies = 3", "copies = 0", "corrections.copies"),
            ("lambda = 0.02", "lambda = -1.0", "learner.lambda"),
            ("kind = \"enumerate-alternatives\"", "kind = \"remove-tokens\"", "corrections.kind"),
            ("samples = 500", "samples = 5", "explainer.samples"),
        ] {
            match ExperimentConfig::from_toml_str(&COLORS.replace(from, to)) {
                Err(CaipiError::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{from} -> {to}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn text_defaults_to_per_document_k() {
        let text = r#"
[dataset]
kind = "text"
docs-per-class = 20
[learner]
kind = "linear"
loss = "logistic"
regularizer = "l2"
[corrections]
kind = "remove-tokens"
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.k_policy().unwrap(), KPolicy::GoldPresent);
        let data = cfg.load_data().unwrap();
        assert_eq!(data.examples.len(), 40);
    }
}
