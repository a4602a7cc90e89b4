//! Batch commands: cross-validated runs, the decoy table and config checks.

use std::path::Path;

use caipi_core::datasets::decoy::generate_decoy;
use caipi_core::learners::LearnerConfig;
use caipi_core::session::{cross_validate, decoy_table, CvResult, DecoyRow, ExperimentConfig};
use caipi_core::CaipiError;

use crate::error::Result;
use crate::output::{self, Clock, RunManifest};

/// Command-line values that replace the config file's.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub folds: Option<usize>,
}

/// Reads, overrides and validates a config file.
pub fn resolve_config(path: &Path, overrides: Overrides) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(folds) = overrides.folds {
        config.folds = folds;
    }
    config.validate()?;
    Ok(config)
}

/// Runs every fold and writes the artifacts plus manifest.json under `out`.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<(CvResult, RunManifest)> {
    let clock = Clock::start();
    let result = cross_validate(config)?;
    let mut outputs = output::write_run(out, &result)?;
    let path = out.join("manifest.json");
    outputs.insert("manifest".into(), path.clone());
    let manifest = output::manifest("run", config, outputs, clock.stop())?;
    output::write_json(&path, &manifest)?;
    Ok((result, manifest))
}

/// Trains the MLP on the fully labeled decoy training split without
/// corrections and with `copies` counterexamples per image.
pub fn cmd_decoy_table(config: &ExperimentConfig, out: &Path, copies: &[usize]) -> Result<(Vec<DecoyRow>, RunManifest)> {
    let mlp = match &config.learner {
        LearnerConfig::Mlp(m) => m.clone(),
        LearnerConfig::Linear(_) => {
            return Err(CaipiError::config("learner.kind", "the decoy table trains the `mlp` learner").into())
        }
    };
    let clock = Clock::start();
    let (spec, seed) = config.decoy_spec()?;
    let data = generate_decoy(&spec, seed)?;
    let mut settings = vec![0];
    settings.extend(copies.iter().copied().filter(|&c| c > 0));
    let rows = decoy_table(&data, &mlp, &settings, config.seed)?;
    let mut outputs = output::write_decoy_table(out, &rows)?;
    let path = out.join("manifest.json");
    outputs.insert("manifest".into(), path.clone());
    let manifest = output::manifest("decoy-table", config, outputs, clock.stop())?;
    output::write_json(&path, &manifest)?;
    Ok((rows, manifest))
}

/// One-line description of a valid config.
pub fn describe(config: &ExperimentConfig) -> String {
    let dataset = toml::Value::try_from(&config.dataset)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str().map(String::from)))
        .unwrap_or_default();
    let learner = match &config.learner {
        LearnerConfig::Linear(c) => format!("linear ({:?}, {:?}, lambda {})", c.loss, c.regularizer, c.lambda),
        LearnerConfig::Mlp(c) => format!("mlp ({} hidden, {} epochs)", c.hidden, c.epochs),
    };
    format!(
        "dataset {dataset}, learner {learner}, budget {}, burn-in {}, {} fold(s), seed {}",
        config.session.budget, config.session.burn_in, config.folds, config.seed
    )
}
