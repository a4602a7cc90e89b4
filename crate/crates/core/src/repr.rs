//! Interpretable representations: how a payload splits into basic components,
//! what the learners see as features, and how a perturbed component vector maps
//! back to model input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Instance, PaletteImage, Payload};
use crate::error::{CaipiError, Result};

/// Component layout of a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Representation {
    /// Square `side x side` pixel blocks of an image (single pixels when `side == 1`).
    /// Every block is always present; switching one off paints it with the baseline.
    Patches { side: usize },
    /// One component per pixel; the model sees the indicators "pixel i has the
    /// same color as pixel j" for every unordered pair `i < j`. Switching a
    /// pixel off recolors it with a random other palette color.
    PixelPairs,
    /// One component per vocabulary word; present iff the word occurs.
    BagOfWords,
}

/// Where a component lives in the raw payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Footprint {
    Pixels(Vec<usize>),
    Word(u32),
}

/// Flat index of the pair `(i, j)` with `i < j` among `n` pixels.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Inverse of [`pair_index`].
pub fn pair_of(index: usize, n: usize) -> (usize, usize) {
    let mut base = 0;
    for i in 0..n {
        let row = n - i - 1;
        if index < base + row {
            return (i, i + 1 + index - base);
        }
        base += row;
    }
    panic!("pair index {index} out of range for {n} pixels");
}

impl Representation {
    fn patch_grid(side: usize, width: usize, height: usize) -> (usize, usize) {
        (width.div_ceil(side), height.div_ceil(side))
    }

    /// Number of interpretable components for this payload.
    pub fn dim(&self, payload: &Payload) -> Result<usize> {
        match (self, payload) {
            (Representation::Patches { side }, Payload::Image(img)) => {
                if *side == 0 {
                    return Err(CaipiError::InvalidInput("patch side must be positive".into()));
                }
                let (gw, gh) = Self::patch_grid(*side, img.width, img.height);
                Ok(gw * gh)
            }
            (Representation::PixelPairs, Payload::Image(img)) => Ok(img.len()),
            (Representation::BagOfWords, Payload::Document(doc)) => Ok(doc.vocab_size),
            _ => Err(self.mismatch(payload)),
        }
    }

    fn mismatch(&self, payload: &Payload) -> CaipiError {
        CaipiError::InvalidInput(format!(
            "representation {self:?} does not apply to {} payloads",
            payload.kind_name()
        ))
    }

    pub fn interp(&self, payload: &Payload) -> Result<Vec<u8>> {
        let d = self.dim(payload)?;
        match (self, payload) {
            (Representation::Patches { .. } | Representation::PixelPairs, Payload::Image(_)) => Ok(vec![1; d]),
            (Representation::BagOfWords, Payload::Document(doc)) => {
                let mut out = vec![0; d];
                for &t in &doc.tokens {
                    out[t as usize] = 1;
                }
                Ok(out)
            }
            _ => Err(self.mismatch(payload)),
        }
    }

    /// Model input vector for a payload.
    pub fn features(&self, payload: &Payload) -> Result<Vec<f64>> {
        match (self, payload) {
            (Representation::Patches { .. }, Payload::Image(img)) => {
                let scale = f64::from(img.palette.saturating_sub(1).max(1));
                Ok(img.pixels().iter().map(|&p| f64::from(p) / scale).collect())
            }
            (Representation::PixelPairs, Payload::Image(img)) => Ok(same_color_pairs(img.pixels())),
            _ => Ok(self.interp(payload)?.into_iter().map(f64::from).collect()),
        }
    }

    /// Length of [`Representation::features`] for this payload.
    pub fn feature_dim(&self, payload: &Payload) -> Result<usize> {
        match (self, payload) {
            (Representation::Patches { .. }, Payload::Image(img)) => Ok(img.len()),
            (Representation::PixelPairs, Payload::Image(img)) => Ok(img.len() * (img.len() - 1) / 2),
            _ => self.dim(payload),
        }
    }

    /// Model input for the instance with every component `j` where `z[j] == 0`
    /// switched off. Only pixel-pair images draw from `rng`.
    pub fn perturbed_features<R: Rng>(&self, instance: &Instance, z: &[u8], baseline: u16, rng: &mut R) -> Vec<f64> {
        match (self, &instance.payload) {
            (Representation::PixelPairs, Payload::Image(img)) => same_color_pairs(&recolor_off(img, z, rng)),
            (Representation::Patches { side }, Payload::Image(img)) => {
                let scale = f64::from(img.palette.saturating_sub(1).max(1));
                let mut out: Vec<f64> = img.pixels().iter().map(|&p| f64::from(p) / scale).collect();
                let base = f64::from(baseline) / scale;
                let (gw, _) = Self::patch_grid(*side, img.width, img.height);
                for (j, _) in z.iter().enumerate().filter(|(_, &v)| v == 0) {
                    let (br, bc) = (j / gw, j % gw);
                    for r in br * side..((br + 1) * side).min(img.height) {
                        for c in bc * side..((bc + 1) * side).min(img.width) {
                            out[r * img.width + c] = base;
                        }
                    }
                }
                out
            }
            // Word presence is switched off directly; equals deleting the tokens.
            _ => instance
                .interp
                .iter()
                .zip(z)
                .map(|(&p, &keep)| f64::from(p & keep))
                .collect(),
        }
    }

    /// Payload region that component `j` occupies.
    pub fn footprint(&self, payload: &Payload, component: usize) -> Result<Footprint> {
        let d = self.dim(payload)?;
        if component >= d {
            return Err(CaipiError::InvalidInput(format!(
                "component {component} out of range ({d})"
            )));
        }
        match (self, payload) {
            (Representation::Patches { side }, Payload::Image(img)) => {
                let (gw, _) = Self::patch_grid(*side, img.width, img.height);
                let (br, bc) = (component / gw, component % gw);
                let mut px = Vec::new();
                for r in br * side..((br + 1) * side).min(img.height) {
                    for c in bc * side..((bc + 1) * side).min(img.width) {
                        px.push(r * img.width + c);
                    }
                }
                Ok(Footprint::Pixels(px))
            }
            (Representation::PixelPairs, Payload::Image(_)) => Ok(Footprint::Pixels(vec![component])),
            (Representation::BagOfWords, Payload::Document(_)) => Ok(Footprint::Word(component as u32)),
            _ => Err(self.mismatch(payload)),
        }
    }

    /// Component index of the patch containing pixel `(row, col)`.
    pub fn patch_of_pixel(side: usize, width: usize, row: usize, col: usize) -> usize {
        let gw = width.div_ceil(side);
        (row / side) * gw + col / side
    }
}

/// Pair indicators in [`pair_index`] order.
pub fn same_color_pairs(px: &[u16]) -> Vec<f64> {
    let n = px.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(if px[i] == px[j] { 1.0 } else { 0.0 });
        }
    }
    out
}

fn recolor_off<R: Rng>(img: &PaletteImage, z: &[u8], rng: &mut R) -> Vec<u16> {
    let mut px = img.pixels().to_vec();
    if img.palette < 2 {
        return px;
    }
    for (i, p) in px.iter_mut().enumerate() {
        if z[i] == 0 {
            let shift = rng.gen_range(1..img.palette);
            *p = (*p + shift) % img.palette;
        }
    }
    px
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Document, PaletteImage};

    #[test]
    fn pair_indexing_roundtrips() {
        let n = 25;
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(pair_index(i, j, n), idx);
                assert_eq!(pair_of(idx, n), (i, j));
                idx += 1;
            }
        }
        assert_eq!(idx, 300);
    }

    #[test]
    fn pair_features_mark_equal_colors() {
        let img = PaletteImage::new(3, 1, 4, vec![2, 2, 1]).unwrap();
        let repr = Representation::PixelPairs;
        let inst = Instance::new(Payload::Image(img), &repr).unwrap();
        assert_eq!(inst.interp, vec![1, 1, 1]);
        assert_eq!(repr.features(&inst.payload).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(repr.feature_dim(&inst.payload).unwrap(), 3);
    }

    #[test]
    fn switched_off_pixels_change_color() {
        let img = PaletteImage::new(4, 1, 4, vec![0, 1, 2, 3]).unwrap();
        let repr = Representation::PixelPairs;
        let inst = Instance::new(Payload::Image(img.clone()), &repr).unwrap();
        let mut rng = crate::task::rng_for(5, 0);
        for _ in 0..50 {
            let px = recolor_off(&img, &[0, 1, 0, 1], &mut rng);
            assert_ne!(px[0], 0);
            assert_ne!(px[2], 2);
            assert_eq!((px[1], px[3]), (1, 3));
        }
        let f = repr.perturbed_features(&inst, &[1; 4], 0, &mut rng);
        assert_eq!(f, repr.features(&inst.payload).unwrap());
    }

    #[test]
    fn patches_cover_image() {
        let img = PaletteImage::filled(16, 16, 256, 10).unwrap();
        let repr = Representation::Patches { side: 4 };
        let payload = Payload::Image(img);
        assert_eq!(repr.dim(&payload).unwrap(), 16);
        let mut all = Vec::new();
        for j in 0..16 {
            match repr.footprint(&payload, j).unwrap() {
                Footprint::Pixels(p) => all.extend(p),
                Footprint::Word(_) => unreachable!(),
            }
        }
        all.sort_unstable();
        assert_eq!(all, (0..256).collect::<Vec<_>>());
        assert_eq!(Representation::patch_of_pixel(4, 16, 13, 2), 12);
    }

    #[test]
    fn perturbing_patches_paints_baseline() {
        let img = PaletteImage::filled(4, 4, 5, 4).unwrap();
        let repr = Representation::Patches { side: 2 };
        let inst = Instance::new(Payload::Image(img), &repr).unwrap();
        let f = repr.perturbed_features(&inst, &[1, 0, 1, 1], 2, &mut crate::task::rng_for(0, 0));
        assert_eq!(f[2], 0.5);
        assert_eq!(f[7], 0.5);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[8], 1.0);
        assert_eq!(repr.perturbed_features(&inst, &[1; 4], 2, &mut crate::task::rng_for(0, 0)), repr.features(&inst.payload).unwrap());
    }

    #[test]
    fn word_masking_equals_token_deletion() {
        let repr = Representation::BagOfWords;
        let doc = Document::new(6, vec![0, 3, 3, 5]).unwrap();
        let inst = Instance::new(Payload::Document(doc), &repr).unwrap();
        let z = [1, 1, 1, 0, 1, 1];
        let dropped = Document::new(6, vec![0, 5]).unwrap();
        assert_eq!(
            repr.perturbed_features(&inst, &z, 0, &mut crate::task::rng_for(0, 0)),
            repr.features(&Payload::Document(dropped)).unwrap()
        );
    }

    #[test]
    fn mismatched_payload_is_rejected() {
        let doc = Payload::Document(Document::new(3, vec![1]).unwrap());
        assert!(Representation::PixelPairs.interp(&doc).is_err());
    }
}
