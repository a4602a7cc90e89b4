//! 3x3 black-and-white images, positive iff both top corners are white.

use rand::Rng;

use crate::data::{Example, PaletteImage, Payload, Provenance, RelevanceMask};
use crate::error::{CaipiError, Result};
use crate::repr::Representation;
use crate::task::{rng_for, GoldStandard, LabelRule, Task, TaskData};

pub const BLACK: u16 = 0;
pub const WHITE: u16 = 1;

pub fn toy_corners_task() -> Task {
    Task {
        name: "toy-corners".into(),
        representation: Representation::Patches { side: 1 },
        num_classes: 2,
        baseline: BLACK,
        value_domain: vec![BLACK, WHITE],
        rule: Some(LabelRule::ToyCorners),
    }
}

/// Gold mask: the pixels (0,0) and (0,2).
pub fn toy_corners_mask() -> RelevanceMask {
    RelevanceMask::new([0, 2])
}

/// Samples `n` uniform random images (duplicates allowed, there are only 512).
pub fn generate_toy_corners(n: usize, seed: u64) -> Result<TaskData> {
    if n == 0 {
        return Err(CaipiError::InvalidInput("toy dataset size must be positive".into()));
    }
    let task = toy_corners_task();
    let rule = LabelRule::ToyCorners;
    let mut rng = rng_for(seed, 0x70_4C);
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let px: Vec<u16> = (0..9).map(|_| rng.gen_range(BLACK..=WHITE)).collect();
        let payload = Payload::Image(PaletteImage::new(3, 3, 2, px)?);
        let label = rule.label(&payload).expect("3x3 payload");
        examples.push(Example::new(task.instance(payload)?, label, Provenance::Seed));
    }
    Ok(TaskData {
        task,
        examples,
        gold: GoldStandard::Fixed(toy_corners_mask()),
        reference: None,
        test: None,
    })
}
