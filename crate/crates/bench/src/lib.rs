//! Fixtures shared by the benchmarks.

use caipi_core::datasets::colors::generate_colors;
use caipi_core::{ColorsRule, Document, Instance, Payload, Representation, TaskData};

/// A document containing each of `d` words once.
pub fn all_words(d: usize) -> Instance {
    let doc = Document::new(d, (0..d as u32).collect()).expect("valid document");
    Instance::new(Payload::Document(doc), &Representation::BagOfWords).expect("valid instance")
}

/// Dense linear score over `d` binary features.
pub fn dense_weights(d: usize) -> Vec<f64> {
    (0..d).map(|j| ((j * 7919) % 13) as f64 / 6.0 - 1.0).collect()
}

pub fn colors(n: usize) -> TaskData {
    generate_colors(n, ColorsRule::Corners, 0).expect("colors data")
}
