//! Task descriptions shared by datasets, corrections, the oracle and sessions.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Instance, InstanceId, Label, Payload, RelevanceMask};
use crate::repr::Representation;

/// Derives an independent stream seed from a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// Which colors rule defines the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorsRule {
    /// The four corner pixels share a color.
    Corners = 0,
    /// The three top middle pixels are pairwise distinct.
    TopMiddle = 1,
}

impl ColorsRule {
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ColorsRule::Corners),
            1 => Some(ColorsRule::TopMiddle),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Exact labeling function available for synthetic tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelRule {
    Colors(ColorsRule),
    ToyCorners,
}

impl LabelRule {
    /// Gold label of a payload, `None` when the payload does not fit the rule.
    pub fn label(&self, payload: &Payload) -> Option<Label> {
        let img = payload.as_image()?;
        match self {
            LabelRule::Colors(rule) => {
                if img.width != 5 || img.height != 5 {
                    return None;
                }
                let holds = match rule {
                    ColorsRule::Corners => crate::datasets::colors::corners_rule(img),
                    ColorsRule::TopMiddle => crate::datasets::colors::top_middle_rule(img),
                };
                Some(usize::from(holds))
            }
            LabelRule::ToyCorners => {
                if img.width != 3 || img.height != 3 {
                    return None;
                }
                Some(usize::from(img.get(0, 0) == 1 && img.get(0, 2) == 1))
            }
        }
    }
}

/// Static description of a learning task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub representation: Representation,
    pub num_classes: usize,
    /// Palette value painted over switched-off image components.
    pub baseline: u16,
    /// Values a randomized or enumerated image footprint may take.
    pub value_domain: Vec<u16>,
    pub rule: Option<LabelRule>,
}

impl Task {
    pub fn instance(&self, payload: Payload) -> crate::Result<Instance> {
        Instance::new(payload, &self.representation)
    }
}

/// Gold relevance masks for explanation evaluation and simulated corrections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GoldStandard {
    /// One mask for every instance.
    Fixed(RelevanceMask),
    /// The mask restricted to components present in the instance.
    PresentOnly(RelevanceMask),
    /// A mask per instance id; unknown ids fall back to the stored default.
    PerInstance {
        masks: BTreeMap<InstanceId, RelevanceMask>,
        default: RelevanceMask,
    },
}

impl GoldStandard {
    pub fn mask_for(&self, instance: &Instance) -> RelevanceMask {
        match self {
            GoldStandard::Fixed(m) => m.clone(),
            GoldStandard::PresentOnly(m) => RelevanceMask::new(
                m.relevant
                    .iter()
                    .copied()
                    .filter(|&j| instance.interp.get(j) == Some(&1)),
            ),
            GoldStandard::PerInstance { masks, default } => {
                masks.get(&instance.id).cloned().unwrap_or_else(|| default.clone())
            }
        }
    }
}

/// Reference hyperplane `<w, x> + b` in feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Hyperplane {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// A generated or loaded dataset with its gold standards.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub task: Task,
    pub examples: Vec<Example>,
    pub gold: GoldStandard,
    /// Perfect hyperplanes of the two candidate rules, when the task has them.
    pub reference: Option<[Hyperplane; 2]>,
    /// A fixed held-out split; when absent, sessions draw test folds from `examples`.
    pub test: Option<Vec<Example>>,
}
