//! Passive, fully labeled decoy experiment: train on the confounded training
//! set with and without counterexamples that randomize the confounder patch.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corrections::{to_counterexamples, CounterexampleStrategy, StrategyKind};
use crate::data::{CorrectionSet, CorrectionSource, Example, InstanceId};
use crate::datasets::decoy::DecoyData;
use crate::error::{CaipiError, Result};
use crate::learners::{self, LearnerConfig, MlpConfig};
use crate::repr::Representation;
use crate::task::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoyRow {
    /// Counterexamples per training image; 0 means no corrections.
    pub copies: usize,
    pub train_size: usize,
    pub train_accuracy: f64,
    /// Accuracy on the test split with random confounder shades.
    pub test_accuracy: f64,
    /// Accuracy on the test images without any confounder.
    pub clean_accuracy: f64,
}

/// Training set with `copies` randomized-patch counterexamples per image.
pub fn augmented_training_set(data: &DecoyData, copies: usize, seed: u64) -> Result<Vec<Example>> {
    let side = match data.task.representation {
        Representation::Patches { side } => side,
        _ => return Err(CaipiError::InvalidInput("decoy task must use patch components".into())),
    };
    let mut out = data.train.clone();
    if copies == 0 {
        return Ok(out);
    }
    let test_ids: BTreeSet<InstanceId> =
        data.confounded_test.iter().chain(&data.clean_test).map(|e| e.id()).collect();
    let mut seen: BTreeSet<InstanceId> = out.iter().map(|e| e.id()).collect();
    let strategy = CounterexampleStrategy::new(StrategyKind::Randomize, copies);
    for (i, e) in data.train.iter().enumerate() {
        let img = e.instance.payload.as_image().expect("decoy images");
        let corner = data.corners[&e.id()];
        let (r0, c0) = corner.origin(img.width, img.height, side);
        let component = Representation::patch_of_pixel(side, img.width, r0, c0);
        let correction = CorrectionSet {
            indices: BTreeSet::from([component]),
            source: CorrectionSource::Simulated,
        };
        let ce = to_counterexamples(
            &e.instance,
            e.label,
            &correction,
            &strategy,
            &data.task,
            &[],
            &test_ids,
            derive_seed(seed, i as u64),
        )?;
        out.extend(ce.examples.into_iter().filter(|c| seen.insert(c.id())));
    }
    Ok(out)
}

/// One row per entry of `copies` (use 0 for the uncorrected model).
pub fn decoy_table(data: &DecoyData, mlp: &MlpConfig, copies: &[usize], seed: u64) -> Result<Vec<DecoyRow>> {
    let repr = data.task.representation;
    let config = LearnerConfig::Mlp(mlp.clone());
    copies
        .iter()
        .map(|&c| {
            let train = augmented_training_set(data, c, derive_seed(seed, 100 + c as u64))?;
            let model = learners::fit(&train, &repr, data.task.num_classes, &config, None, derive_seed(seed, 1))?;
            Ok(DecoyRow {
                copies: c,
                train_size: train.len(),
                train_accuracy: learners::accuracy(&model, &data.train, &repr)?,
                test_accuracy: learners::accuracy(&model, &data.confounded_test, &repr)?,
                clean_accuracy: learners::accuracy(&model, &data.clean_test, &repr)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::decoy::{generate_decoy, DecoyBase, DecoySpec};

    #[test]
    fn counterexamples_only_touch_the_patch() {
        let spec = DecoySpec {
            base: DecoyBase::Shapes {
                n_train: 40,
                n_test: 10,
                noise: 60,
            },
            patch: 4,
        };
        let data = generate_decoy(&spec, 1).unwrap();
        let aug = augmented_training_set(&data, 3, 0).unwrap();
        assert!(aug.len() > data.train.len());
        assert!(aug.len() <= data.train.len() * 4);
        for ce in &aug[data.train.len()..] {
            let img = ce.instance.payload.as_image().unwrap();
            // find the parent: same label, identical outside one corner block
            let parent = data
                .train
                .iter()
                .find(|p| {
                    let pi = p.instance.payload.as_image().unwrap();
                    let patch = data.patch_pixels(p.id(), 16, 16).unwrap();
                    p.label == ce.label
                        && (0..256).all(|k| patch.contains(&k) || pi.pixels()[k] == img.pixels()[k])
                })
                .expect("parent exists");
            let patch = data.patch_pixels(parent.id(), 16, 16).unwrap();
            let shade = img.pixels()[patch[0]];
            assert!(patch.iter().all(|&k| img.pixels()[k] == shade));
            assert!(data.shade_map.contains(&shade));
        }
    }
}
