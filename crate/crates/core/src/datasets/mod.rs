//! Deterministic generators and loaders for the supported task families.

pub mod colors;
pub mod decoy;
pub mod text;
pub mod toy;

pub use colors::generate_colors;
pub use decoy::{generate_decoy, DecoyBase, DecoyData, DecoySpec};
pub use text::{load_text, synthetic_text_task, SyntheticCorpusSpec, TextTask};
pub use toy::generate_toy_corners;
