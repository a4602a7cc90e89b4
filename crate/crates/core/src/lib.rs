//! Explanatory interactive learning.
//!
//! An active learner picks a query, predicts its label and explains the
//! prediction with a sparse local surrogate. The annotator answers with the
//! true label and, when the prediction is right for the wrong reasons, a set
//! of wrongly relevant components. Those corrections become counterexamples
//! that are added to the training set before the learner is refit.

pub mod corrections;
pub mod data;
pub mod datasets;
pub mod error;
pub mod learners;
pub mod lime;
pub mod oracle;
pub mod repr;
pub mod session;
pub mod task;

pub use data::{
    correction_from_gold, explanation_f1, CorrectionSet, CorrectionSource, Document, Example, Explanation,
    Instance, InstanceId, Label, PaletteImage, Payload, Pool, Provenance, RelevanceMask,
};
pub use error::{CaipiError, Result};
pub use repr::Representation;
pub use task::{ColorsRule, GoldStandard, Hyperplane, LabelRule, Task, TaskData};
