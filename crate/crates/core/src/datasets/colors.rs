//! The 5x5, four-color "colors" problem. An image is positive when the four
//! corners share a color (rule 0) or the three top middle pixels are pairwise
//! distinct (rule 1); only images where both rules agree are kept, so labels
//! alone cannot tell the rules apart.

use rand::Rng;

use crate::data::{Example, PaletteImage, Payload, Provenance, RelevanceMask};
use crate::error::{CaipiError, Result};
use crate::repr::{pair_index, Representation};
use crate::task::{rng_for, ColorsRule, GoldStandard, Hyperplane, LabelRule, Task, TaskData};

pub const SIDE: usize = 5;
pub const PIXELS: usize = SIDE * SIDE;
pub const PALETTE: u16 = 4;
/// Number of pixel-pair features, C(25, 2).
pub const PAIR_DIM: usize = PIXELS * (PIXELS - 1) / 2;

pub const CORNERS: [usize; 4] = [0, SIDE - 1, PIXELS - SIDE, PIXELS - 1];
pub const TOP_MIDDLE: [usize; 3] = [1, 2, 3];

/// Draw budget per requested example for the rejection sampler.
const DRAWS_PER_EXAMPLE: usize = 2_000;

pub fn corners_rule(img: &PaletteImage) -> bool {
    let px = img.pixels();
    let c = px[CORNERS[0]];
    CORNERS.iter().all(|&i| px[i] == c)
}

pub fn top_middle_rule(img: &PaletteImage) -> bool {
    let px = img.pixels();
    let [a, b, c] = TOP_MIDDLE.map(|i| px[i]);
    a != b && a != c && b != c
}

fn pairs_among(pixels: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for (a, &i) in pixels.iter().enumerate() {
        for &j in &pixels[a + 1..] {
            out.push(pair_index(i.min(j), i.max(j), PIXELS));
        }
    }
    out.sort_unstable();
    out
}

/// Pixels relevant to a rule: the 4 corners or the 3 top middle pixels.
pub fn rule_mask(rule: ColorsRule) -> RelevanceMask {
    RelevanceMask::new(rule_pixels(rule).iter().copied())
}

fn rule_pixels(rule: ColorsRule) -> &'static [usize] {
    match rule {
        ColorsRule::Corners => &CORNERS,
        ColorsRule::TopMiddle => &TOP_MIDDLE,
    }
}

/// Pair features a rule depends on: 6 corner pairs or 3 top middle pairs.
pub fn rule_pairs(rule: ColorsRule) -> Vec<usize> {
    pairs_among(rule_pixels(rule))
}

/// Sparse hyperplane separating the data under the pair-feature map.
///
/// Corner pairs count 6 on rule-0 positives and at most 3 otherwise; top
/// middle pairs count 0 on rule-1 positives and at least 1 otherwise.
pub fn reference_hyperplane(rule: ColorsRule) -> Hyperplane {
    let mut weights = vec![0.0; PAIR_DIM];
    let (w, bias) = match rule {
        ColorsRule::Corners => (1.0, -4.5),
        ColorsRule::TopMiddle => (-1.0, 0.5),
    };
    for j in rule_pairs(rule) {
        weights[j] = w;
    }
    Hyperplane { weights, bias }
}

pub fn colors_task(rule: ColorsRule) -> Task {
    Task {
        name: format!("colors-rule{}", rule.index()),
        representation: Representation::PixelPairs,
        num_classes: 2,
        baseline: (PALETTE - 1) / 2,
        value_domain: (0..PALETTE).collect(),
        rule: Some(LabelRule::Colors(rule)),
    }
}

/// Rejection-samples `n` images on which both rules agree, half of them positive
/// (the odd one goes to the negatives).
pub fn generate_colors(n: usize, rule: ColorsRule, seed: u64) -> Result<TaskData> {
    if n == 0 {
        return Err(CaipiError::InvalidInput("colors dataset size must be positive".into()));
    }
    let task = colors_task(rule);
    let mut rng = rng_for(seed, 0xC0_10_25);
    let quota = [n - n / 2, n / 2];
    let mut counts = [0usize; 2];
    let mut seen = std::collections::BTreeSet::new();
    let mut examples = Vec::with_capacity(n);
    let budget = n * DRAWS_PER_EXAMPLE;
    let mut draws = 0;
    while examples.len() < n {
        if draws >= budget {
            return Err(CaipiError::GeneratorExhausted {
                draws,
                accepted: examples.len(),
                requested: n,
            });
        }
        draws += 1;
        let pixels: Vec<u16> = (0..PIXELS).map(|_| rng.gen_range(0..PALETTE)).collect();
        let img = PaletteImage::new(SIDE, SIDE, PALETTE, pixels)?;
        let r0 = corners_rule(&img);
        let r1 = top_middle_rule(&img);
        if r0 != r1 {
            continue;
        }
        let label = usize::from(r0);
        if counts[label] >= quota[label] {
            continue;
        }
        let inst = task.instance(Payload::Image(img))?;
        if !seen.insert(inst.id) {
            continue;
        }
        counts[label] += 1;
        examples.push(Example::new(inst, label, Provenance::Seed));
    }
    Ok(TaskData {
        gold: GoldStandard::Fixed(rule_mask(rule)),
        reference: Some([
            reference_hyperplane(ColorsRule::Corners),
            reference_hyperplane(ColorsRule::TopMiddle),
        ]),
        task,
        examples,
        test: None,
    })
}
