mod common;

use std::collections::{BTreeMap, BTreeSet};

use caipi_core::corrections::{to_counterexamples, CounterexampleStrategy, StrategyKind};
use caipi_core::datasets::decoy::{generate_decoy, shade_map, DecoyBase, DecoySpec};
use caipi_core::{CorrectionSet, CorrectionSource, Representation};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn counterexample_contract(seed in any::<u64>()) {
        let case = common::ce_case(seed);
        if let Err(msg) = common::check_ce_case(&case) {
            prop_assert!(false, "{msg}: {case:?}");
        }
    }
}

/// Upper 0.01 quantile of chi-square with 3 degrees of freedom.
const CHI2_3_01: f64 = 11.345;

#[test]
fn randomized_decoy_shades_are_uniform() {
    let spec = DecoySpec {
        base: DecoyBase::Shapes {
            n_train: 400,
            n_test: 4,
            noise: 60,
        },
        patch: 4,
    };
    let data = generate_decoy(&spec, 9).unwrap();
    let shades = shade_map(4);
    let strategy = CounterexampleStrategy::new(StrategyKind::Randomize, 1);
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for (i, e) in data.train.iter().enumerate() {
        let img = e.instance.payload.as_image().unwrap();
        let (r0, c0) = data.corners[&e.id()].origin(16, 16, 4);
        let component = Representation::patch_of_pixel(4, 16, r0, c0);
        let correction = CorrectionSet {
            indices: BTreeSet::from([component]),
            source: CorrectionSource::Simulated,
        };
        let out = to_counterexamples(&e.instance, e.label, &correction, &strategy, &data.task, &[], &BTreeSet::new(), i as u64)
            .unwrap();
        for ce in &out.examples {
            let shade = ce.instance.payload.as_image().unwrap().pixels()[r0 * 16 + c0];
            assert_ne!(shade, img.pixels()[r0 * 16 + c0]);
            *counts.entry(shade).or_default() += 1;
        }
    }
    // the parent's own shade is dropped as a duplicate; with balanced labels
    // every shade is still equally likely overall
    let n: usize = counts.values().sum();
    assert!(n > 200, "only {n} counterexamples");
    let expected = n as f64 / shades.len() as f64;
    let chi2: f64 = shades
        .iter()
        .map(|s| {
            let o = *counts.get(s).unwrap_or(&0) as f64;
            (o - expected).powi(2) / expected
        })
        .sum();
    assert!(chi2 < CHI2_3_01, "chi-square {chi2:.2} with counts {counts:?}");
}

#[test]
fn a_train_shade_differs_from_a_random_test_shade_at_rate_one_minus_one_over_c() {
    let spec = DecoySpec {
        base: DecoyBase::Shapes {
            n_train: 8,
            n_test: 2000,
            noise: 60,
        },
        patch: 4,
    };
    let data = generate_decoy(&spec, 3).unwrap();
    let shades = shade_map(4);
    let differs = data
        .confounded_test
        .iter()
        .filter(|e| {
            let px = data.patch_pixels(e.id(), 16, 16).unwrap();
            e.instance.payload.as_image().unwrap().pixels()[px[0]] != shades[e.label]
        })
        .count() as f64
        / data.confounded_test.len() as f64;
    assert!((differs - 0.75).abs() < 0.04, "{differs}");
}
