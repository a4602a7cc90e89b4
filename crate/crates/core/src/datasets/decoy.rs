//! Decoy image classification: every image gets a `patch x patch` confounder in a
//! random corner. On the training split the patch shade is a function of the
//! label; on the test split it is drawn uniformly from the same shade set.
//!
//! The built-in base images are 16x16 grayscale shapes with four classes. A
//! reader for IDX files (the MNIST family) is provided for full-size runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, InstanceId, Label, PaletteImage, Payload, Provenance, RelevanceMask};
use crate::error::{CaipiError, Result};
use crate::repr::Representation;
use crate::task::{rng_for, GoldStandard, Task, TaskData};

pub const GRAY_LEVELS: u16 = 256;

/// Where base images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DecoyBase {
    /// Synthetic 16x16 shapes, four classes.
    Shapes {
        #[serde(default = "default_train")]
        n_train: usize,
        #[serde(default = "default_test")]
        n_test: usize,
        /// Upper bound of the uniform background noise (0-255).
        #[serde(default = "default_noise")]
        noise: u16,
    },
    /// IDX image/label files (e.g. fashion-MNIST).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn default_train() -> usize {
    1000
}
fn default_test() -> usize {
    1000
}
fn default_noise() -> u16 {
    90
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoySpec {
    #[serde(flatten)]
    pub base: DecoyBase,
    #[serde(default = "default_patch")]
    pub patch: usize,
}

fn default_patch() -> usize {
    4
}

impl Default for DecoySpec {
    fn default() -> Self {
        DecoySpec {
            base: DecoyBase::Shapes {
                n_train: default_train(),
                n_test: default_test(),
                noise: default_noise(),
            },
            patch: default_patch(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight];

    /// Top-left pixel of a `patch`-sized square in this corner.
    pub fn origin(self, width: usize, height: usize, patch: usize) -> (usize, usize) {
        match self {
            Corner::TopLeft => (0, 0),
            Corner::TopRight => (0, width - patch),
            Corner::BottomLeft => (height - patch, 0),
            Corner::BottomRight => (height - patch, width - patch),
        }
    }
}

/// Output of [`generate_decoy`].
#[derive(Clone, Debug)]
pub struct DecoyData {
    pub task: Task,
    pub train: Vec<Example>,
    pub confounded_test: Vec<Example>,
    /// The test images without any patch.
    pub clean_test: Vec<Example>,
    /// Per-instance masks: every patch component except the confounder's.
    pub gold: GoldStandard,
    /// Training-split shade of each label.
    pub shade_map: Vec<u16>,
    pub corners: BTreeMap<InstanceId, Corner>,
}

impl DecoyData {
    pub fn into_task_data(self) -> TaskData {
        TaskData {
            task: self.task,
            examples: self.train,
            gold: self.gold,
            reference: None,
            test: Some(self.confounded_test),
        }
    }

    /// Pixels covered by the confounder of an instance.
    pub fn patch_pixels(&self, id: InstanceId, width: usize, height: usize) -> Option<Vec<usize>> {
        let patch = match self.task.representation {
            Representation::Patches { side } => side,
            _ => return None,
        };
        let (r0, c0) = self.corners.get(&id)?.origin(width, height, patch);
        Some(
            (r0..r0 + patch)
                .flat_map(|r| (c0..c0 + patch).map(move |c| r * width + c))
                .collect(),
        )
    }
}

/// Injective label-to-shade map spread over the bright half of the gray range.
pub fn shade_map(num_classes: usize) -> Vec<u16> {
    if num_classes == 1 {
        return vec![255];
    }
    (0..num_classes)
        .map(|y| 255 - ((y * 192) as f64 / (num_classes - 1) as f64).round() as u16)
        .collect()
}

pub fn decoy_task(num_classes: usize, patch: usize) -> Task {
    let shades = shade_map(num_classes);
    Task {
        name: "decoy".into(),
        representation: Representation::Patches { side: patch },
        num_classes,
        baseline: (GRAY_LEVELS - 1) / 2,
        value_domain: shades,
        rule: None,
    }
}

fn paint(img: &mut PaletteImage, row: usize, col: usize, value: u16) {
    if row < img.height && col < img.width {
        img.set(row, col, value);
    }
}

/// One synthetic shape image. Shapes stay inside the central `[4, 12)` box so
/// they never touch a 4x4 corner.
fn shape_image(label: Label, noise: u16, rng: &mut impl Rng) -> PaletteImage {
    let mut img = PaletteImage::filled(16, 16, GRAY_LEVELS, 0).expect("static size");
    for i in 0..img.len() {
        img.set_flat(i, rng.gen_range(0..=noise.min(255)));
    }
    let ink = |rng: &mut dyn rand::RngCore| rng.gen_range(110..=230u16);
    let len = rng.gen_range(4..=7usize);
    let thick = rng.gen_range(1..=2usize);
    match label % 4 {
        0 => {
            let r = rng.gen_range(4..12 - thick + 1);
            let c = rng.gen_range(4..=12 - len);
            for dr in 0..thick {
                for dc in 0..len {
                    let v = ink(rng);
                    paint(&mut img, r + dr, c + dc, v);
                }
            }
        }
        1 => {
            let c = rng.gen_range(4..12 - thick + 1);
            let r = rng.gen_range(4..=12 - len);
            for dc in 0..thick {
                for dr in 0..len {
                    let v = ink(rng);
                    paint(&mut img, r + dr, c + dc, v);
                }
            }
        }
        2 => {
            let size = rng.gen_range(4..=6usize);
            let r = rng.gen_range(4..=12 - size);
            let c = rng.gen_range(4..=12 - size);
            for t in 0..size {
                for (rr, cc) in [(r, c + t), (r + size - 1, c + t), (r + t, c), (r + t, c + size - 1)] {
                    let v = ink(rng);
                    paint(&mut img, rr, cc, v);
                }
            }
        }
        _ => {
            let r = rng.gen_range(4..=12 - len);
            let c = rng.gen_range(4..=12 - len);
            let anti = rng.gen_bool(0.5);
            for t in 0..len {
                let cc = if anti { c + len - 1 - t } else { c + t };
                let v = ink(rng);
                paint(&mut img, r + t, cc, v);
            }
        }
    }
    // clutter strokes shared by all classes
    for _ in 0..2 {
        let r = rng.gen_range(4..12usize);
        let c = rng.gen_range(4..12usize);
        let horizontal = rng.gen_bool(0.5);
        for t in 0..rng.gen_range(2..=3usize) {
            let (rr, cc) = if horizontal { (r, (c + t).min(11)) } else { ((r + t).min(11), c) };
            let v = ink(rng);
            paint(&mut img, rr, cc, v);
        }
    }
    img
}

/// Built-in four-class shapes data: balanced labels in shuffled order.
pub fn shapes_base(n: usize, noise: u16, seed: u64) -> Vec<(PaletteImage, Label)> {
    let mut rng = rng_for(seed, 0x5A_A9E5);
    let mut labels: Vec<Label> = (0..n).map(|i| i % 4).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|y| (shape_image(y, noise, &mut rng), y))
        .collect()
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CaipiError::io(path, e))
}

fn malformed(path: &Path, message: impl Into<String>) -> CaipiError {
    CaipiError::Malformed {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Reads an IDX3 unsigned-byte image file and its IDX1 label file.
pub fn read_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Vec<(PaletteImage, Label)>> {
    let img_bytes = read_all(images)?;
    let lbl_bytes = read_all(labels)?;
    if img_bytes.len() < 16 || be_u32(&img_bytes, 0) != 0x0000_0803 {
        return Err(malformed(images, "not an IDX3 unsigned-byte file"));
    }
    if lbl_bytes.len() < 8 || be_u32(&lbl_bytes, 0) != 0x0000_0801 {
        return Err(malformed(labels, "not an IDX1 unsigned-byte file"));
    }
    let count = be_u32(&img_bytes, 4) as usize;
    let rows = be_u32(&img_bytes, 8) as usize;
    let cols = be_u32(&img_bytes, 12) as usize;
    if be_u32(&lbl_bytes, 4) as usize != count {
        return Err(malformed(labels, "label count differs from image count"));
    }
    if img_bytes.len() != 16 + count * rows * cols || lbl_bytes.len() != 8 + count {
        return Err(malformed(images, "file length does not match header"));
    }
    let take = limit.unwrap_or(count).min(count);
    let mut out = Vec::with_capacity(take);
    for i in 0..take {
        let start = 16 + i * rows * cols;
        let px = img_bytes[start..start + rows * cols].iter().map(|&b| u16::from(b)).collect();
        out.push((PaletteImage::new(cols, rows, GRAY_LEVELS, px)?, usize::from(lbl_bytes[8 + i])));
    }
    Ok(out)
}

fn stamp(img: &PaletteImage, corner: Corner, patch: usize, shade: u16) -> PaletteImage {
    let mut out = img.clone();
    let (r0, c0) = corner.origin(img.width, img.height, patch);
    for r in r0..r0 + patch {
        for c in c0..c0 + patch {
            out.set(r, c, shade);
        }
    }
    out
}

/// Builds train, confounded-test and clean-test splits with per-instance gold masks.
pub fn generate_decoy(spec: &DecoySpec, seed: u64) -> Result<DecoyData> {
    let (train_base, test_base) = match &spec.base {
        DecoyBase::Shapes { n_train, n_test, noise } => (
            shapes_base(*n_train, *noise, seed),
            shapes_base(*n_test, *noise, seed ^ 0xFFFF_0000),
        ),
        DecoyBase::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
        } => (
            read_idx(train_images, train_labels, *limit)?,
            read_idx(test_images, test_labels, *limit)?,
        ),
    };
    decoy_from_base(train_base, test_base, spec.patch, seed)
}

/// Stamps confounders onto arbitrary base images.
pub fn decoy_from_base(
    train_base: Vec<(PaletteImage, Label)>,
    test_base: Vec<(PaletteImage, Label)>,
    patch: usize,
    seed: u64,
) -> Result<DecoyData> {
    let first = train_base
        .first()
        .ok_or_else(|| CaipiError::InvalidInput("decoy base has no training images".into()))?;
    let (width, height) = (first.0.width, first.0.height);
    if patch == 0 || patch > width || patch > height {
        return Err(CaipiError::InvalidInput(format!(
            "patch size {patch} does not fit {width}x{height} images"
        )));
    }
    if train_base
        .iter()
        .chain(&test_base)
        .any(|(img, _)| img.width != width || img.height != height)
    {
        return Err(CaipiError::InvalidInput("decoy base images differ in size".into()));
    }
    let num_classes = train_base.iter().chain(&test_base).map(|(_, y)| y + 1).max().unwrap_or(0);
    if num_classes < 2 {
        return Err(CaipiError::InvalidInput("decoy task needs at least two classes".into()));
    }
    let task = decoy_task(num_classes, patch);
    let shades = shade_map(num_classes);
    let mut rng = rng_for(seed, 0xDEC0);
    let mut masks = BTreeMap::new();
    let mut corners = BTreeMap::new();
    let d = width.div_ceil(patch) * height.div_ceil(patch);

    let mut add = |img: PaletteImage, label: Label, corner: Option<Corner>| -> Result<Example> {
        let inst = task.instance(Payload::Image(img))?;
        let mask = match corner {
            Some(c) => {
                let (r0, c0) = c.origin(width, height, patch);
                let mut blocked = std::collections::BTreeSet::new();
                for r in r0..r0 + patch {
                    for cc in c0..c0 + patch {
                        blocked.insert(Representation::patch_of_pixel(patch, width, r, cc));
                    }
                }
                corners.insert(inst.id, c);
                RelevanceMask::new((0..d).filter(|j| !blocked.contains(j)))
            }
            None => RelevanceMask::new(0..d),
        };
        masks.insert(inst.id, mask);
        Ok(Example::new(inst, label, Provenance::Seed))
    };

    let mut train = Vec::with_capacity(train_base.len());
    for (img, y) in train_base {
        let corner = *Corner::ALL.choose(&mut rng).expect("four corners");
        train.push(add(stamp(&img, corner, patch, shades[y]), y, Some(corner))?);
    }
    let mut confounded_test = Vec::with_capacity(test_base.len());
    let mut clean_test = Vec::with_capacity(test_base.len());
    for (img, y) in test_base {
        let corner = *Corner::ALL.choose(&mut rng).expect("four corners");
        let shade = *shades.choose(&mut rng).expect("nonempty shades");
        confounded_test.push(add(stamp(&img, corner, patch, shade), y, Some(corner))?);
        clean_test.push(add(img, y, None)?);
    }
    Ok(DecoyData {
        task,
        train,
        confounded_test,
        clean_test,
        gold: GoldStandard::PerInstance {
            masks,
            default: RelevanceMask::new(0..d),
        },
        shade_map: shades,
        corners,
    })
}
