//! Domain types shared across the crate: instances, labeled examples, the
//! labeled/unlabeled pool, explanations and explanation corrections.
//!
//! Everything here is a plain value type. Instances carry their binary
//! interpretable representation next to the raw payload; the representation
//! is recomputed from the payload whenever an instance is built so the two
//! never drift apart.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{CaipiError, Result};
use crate::repr::Representation;

/// Class identifier in `0..num_classes`.
pub type Label = usize;

/// Stable 64-bit identifier derived from the canonical payload serialization.
///
/// Serialized as a 16-digit hex string so JSON consumers without 64-bit
/// integers keep it intact.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceId(pub u64);

impl InstanceId {
    pub fn of_payload(payload: &Payload) -> Self {
        let canonical = serde_json::to_vec(payload).expect("payload serializes");
        let digest = Sha256::digest(&canonical);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        InstanceId(u64::from_be_bytes(bytes))
    }
}

impl fmt::Debug for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for InstanceId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(InstanceId)
    }
}

impl Serialize for InstanceId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InstanceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A row-major grid of palette indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteImage {
    pub width: usize,
    pub height: usize,
    pub palette: u16,
    pixels: Vec<u16>,
}

impl PaletteImage {
    pub fn new(width: usize, height: usize, palette: u16, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || palette == 0 {
            return Err(CaipiError::InvalidInput("empty image or palette".into()));
        }
        if pixels.len() != width * height {
            return Err(CaipiError::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some(&bad) = pixels.iter().find(|&&p| p >= palette) {
            return Err(CaipiError::InvalidInput(format!(
                "palette index {bad} out of range for palette size {palette}"
            )));
        }
        Ok(PaletteImage {
            width,
            height,
            palette,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, palette: u16, value: u16) -> Result<Self> {
        Self::new(width, height, palette, vec![value; width * height])
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    /// Writes `value` at flat index `index`. Panics when the value is outside the palette.
    pub fn set_flat(&mut self, index: usize, value: u16) {
        assert!(value < self.palette, "palette index out of range");
        self.pixels[index] = value;
    }

    pub fn set(&mut self, row: usize, col: usize, value: u16) {
        let w = self.width;
        self.set_flat(row * w + col, value);
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct ImageRepr {
    width: usize,
    height: usize,
    palette: u16,
    pixels: Vec<Vec<u16>>,
}

impl Serialize for PaletteImage {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ImageRepr {
            width: self.width,
            height: self.height,
            palette: self.palette,
            pixels: self.pixels.chunks(self.width).map(<[u16]>::to_vec).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PaletteImage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ImageRepr::deserialize(d)?;
        if r.pixels.len() != r.height || r.pixels.iter().any(|row| row.len() != r.width) {
            return Err(serde::de::Error::custom("pixel rows do not match width/height"));
        }
        PaletteImage::new(r.width, r.height, r.palette, r.pixels.concat())
            .map_err(serde::de::Error::custom)
    }
}

/// An ordered token list over a vocabulary of `vocab_size` words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub vocab_size: usize,
    pub tokens: Vec<u32>,
}

impl Document {
    pub fn new(vocab_size: usize, tokens: Vec<u32>) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(CaipiError::InvalidInput(format!(
                "token {bad} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(Document { vocab_size, tokens })
    }

    pub fn contains(&self, word: u32) -> bool {
        self.tokens.contains(&word)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Image(PaletteImage),
    Document(Document),
}

impl Payload {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::Image(_) => "image",
            Payload::Document(_) => "document",
        }
    }

    pub fn as_image(&self) -> Option<&PaletteImage> {
        match self {
            Payload::Image(img) => Some(img),
            Payload::Document(_) => None,
        }
    }

    pub fn as_document(&self) -> Option<&Document> {
        match self {
            Payload::Document(doc) => Some(doc),
            Payload::Image(_) => None,
        }
    }
}

/// A raw input together with its interpretable representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub payload: Payload,
    pub interp: Vec<u8>,
}

impl Instance {
    pub fn new(payload: Payload, repr: &Representation) -> Result<Self> {
        let interp = repr.interp(&payload)?;
        Ok(Instance {
            id: InstanceId::of_payload(&payload),
            payload,
            interp,
        })
    }

    /// Number of interpretable components.
    pub fn dim(&self) -> usize {
        self.interp.len()
    }

    pub fn present_components(&self) -> impl Iterator<Item = usize> + '_ {
        self.interp
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(j, _)| j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Seed,
    QueryLabel,
    Counterexample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub instance: Instance,
    pub label: Label,
    pub provenance: Provenance,
}

impl Example {
    pub fn new(instance: Instance, label: Label, provenance: Provenance) -> Self {
        Example {
            instance,
            label,
            provenance,
        }
    }

    pub fn id(&self) -> InstanceId {
        self.instance.id
    }
}

/// Labeled set L and unlabeled pool U. Instance ids are unique across both.
#[derive(Clone, Debug, Default)]
pub struct Pool {
    labeled: Vec<Example>,
    unlabeled: Vec<Instance>,
    labeled_ids: BTreeSet<InstanceId>,
    unlabeled_index: BTreeMap<InstanceId, usize>,
}

impl Pool {
    pub fn new(labeled: Vec<Example>, unlabeled: Vec<Instance>) -> Result<Self> {
        let mut pool = Pool::default();
        for ex in labeled {
            if !pool.add_labeled(ex) {
                return Err(CaipiError::InvalidInput("duplicate labeled instance id".into()));
            }
        }
        for inst in unlabeled {
            if pool.labeled_ids.contains(&inst.id) || pool.unlabeled_index.contains_key(&inst.id) {
                return Err(CaipiError::InvalidInput(format!(
                    "instance {} appears twice in the pool",
                    inst.id
                )));
            }
            pool.unlabeled_index.insert(inst.id, pool.unlabeled.len());
            pool.unlabeled.push(inst);
        }
        Ok(pool)
    }

    pub fn labeled(&self) -> &[Example] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[Instance] {
        &self.unlabeled
    }

    pub fn contains_labeled(&self, id: InstanceId) -> bool {
        self.labeled_ids.contains(&id)
    }

    pub fn contains_unlabeled(&self, id: InstanceId) -> bool {
        self.unlabeled_index.contains_key(&id)
    }

    /// Adds an example to L, removing its instance from U if present.
    /// Returns false (and leaves the pool untouched) if L already holds the id.
    pub fn add_labeled(&mut self, example: Example) -> bool {
        let id = example.id();
        if self.labeled_ids.contains(&id) {
            return false;
        }
        self.remove_unlabeled(id);
        self.labeled_ids.insert(id);
        self.labeled.push(example);
        true
    }

    pub fn remove_unlabeled(&mut self, id: InstanceId) -> Option<Instance> {
        let pos = self.unlabeled_index.remove(&id)?;
        let inst = self.unlabeled.remove(pos);
        for idx in self.unlabeled_index.values_mut() {
            if *idx > pos {
                *idx -= 1;
            }
        }
        Some(inst)
    }

    pub fn unlabeled_by_id(&self, id: InstanceId) -> Option<&Instance> {
        self.unlabeled_index.get(&id).map(|&i| &self.unlabeled[i])
    }
}

/// Sparse local explanation of one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// `(component, weight)` pairs ordered by decreasing `|weight|`.
    pub components: Vec<(usize, f64)>,
    pub intercept: f64,
    pub k: usize,
    pub target_label: Label,
    #[serde(default)]
    pub seed: u64,
    /// Set when the surrogate could not use `k` linearly independent components.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl Explanation {
    pub fn empty(k: usize, target_label: Label) -> Self {
        Explanation {
            components: Vec::new(),
            intercept: 0.0,
            k,
            target_label,
            seed: 0,
            rank_deficient: false,
        }
    }

    pub fn indices(&self) -> BTreeSet<usize> {
        self.components.iter().map(|&(j, _)| j).collect()
    }

    pub fn weight_of(&self, component: usize) -> Option<f64> {
        self.components
            .iter()
            .find(|&&(j, _)| j == component)
            .map(|&(_, w)| w)
    }

    /// Checks the structural invariants against a component count `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.components.len() > self.k {
            return Err(CaipiError::InvalidInput(format!(
                "{} components exceed budget k={}",
                self.components.len(),
                self.k
            )));
        }
        let mut seen = BTreeSet::new();
        for &(j, w) in &self.components {
            if j >= d || !seen.insert(j) || w == 0.0 || !w.is_finite() {
                return Err(CaipiError::InvalidInput(format!(
                    "invalid explanation component ({j}, {w})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionSource {
    Simulated,
    Human,
}

/// Components an annotator marks as wrongly relevant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionSet {
    pub indices: BTreeSet<usize>,
    pub source: CorrectionSource,
}

impl CorrectionSet {
    pub fn empty(source: CorrectionSource) -> Self {
        CorrectionSet {
            indices: BTreeSet::new(),
            source,
        }
    }

    /// Builds a correction set, rejecting indices that the explanation did not select.
    pub fn for_explanation(
        expl: &Explanation,
        indices: impl IntoIterator<Item = usize>,
        source: CorrectionSource,
    ) -> Result<Self> {
        let allowed = expl.indices();
        let indices: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(bad) = indices.iter().find(|j| !allowed.contains(j)) {
            return Err(CaipiError::InvalidInput(format!(
                "component {bad} is not part of the explanation"
            )));
        }
        Ok(CorrectionSet { indices, source })
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }
}

/// Gold-standard relevant components.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelevanceMask {
    pub relevant: BTreeSet<usize>,
}

impl RelevanceMask {
    pub fn new(relevant: impl IntoIterator<Item = usize>) -> Self {
        RelevanceMask {
            relevant: relevant.into_iter().collect(),
        }
    }

    pub fn contains(&self, j: usize) -> bool {
        self.relevant.contains(&j)
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }
}

/// F1 between explained components and the gold set; 0 when nothing was explained.
pub fn explanation_f1(explained: &BTreeSet<usize>, gold: &RelevanceMask) -> f64 {
    if explained.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let hits = explained.intersection(&gold.relevant).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / explained.len() as f64;
    let recall = hits / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// The explanation's components that the gold mask does not contain.
pub fn correction_from_gold(expl: &Explanation, gold: &RelevanceMask) -> CorrectionSet {
    CorrectionSet {
        indices: expl
            .components
            .iter()
            .map(|&(j, _)| j)
            .filter(|j| !gold.contains(*j))
            .collect(),
        source: CorrectionSource::Simulated,
    }
}
