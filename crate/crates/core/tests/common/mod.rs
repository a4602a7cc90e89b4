#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use caipi_core::corrections::{to_counterexamples, CounterexampleStrategy, StrategyKind};
use caipi_core::datasets::colors::colors_task;
use caipi_core::datasets::decoy::decoy_task;
use caipi_core::learners::{self, select_query, Model};
use caipi_core::repr::Footprint;
use caipi_core::session::{fit_seed, query_rng, stratified_seed_set, SessionSetup};
use caipi_core::task::rng_for;
use caipi_core::{
    ColorsRule, CorrectionSet, CorrectionSource, Document, Example, Instance, InstanceId, Label, PaletteImage,
    Payload, Provenance, Representation, Task,
};
use rand::seq::SliceRandom;
use rand::Rng;

/// One randomized input to `to_counterexamples`.
#[derive(Clone, Debug)]
pub struct CeCase {
    pub task: Task,
    pub x: Instance,
    pub y_hat: Label,
    pub correction: CorrectionSet,
    pub strategy: CounterexampleStrategy,
    pub labeled: Vec<Example>,
    pub seed: u64,
}

fn random_image(rng: &mut impl Rng, side: usize, palette: u16) -> PaletteImage {
    let px = (0..side * side).map(|_| rng.gen_range(0..palette)).collect();
    PaletteImage::new(side, side, palette, px).unwrap()
}

fn text_task(vocab: usize) -> Task {
    Task {
        name: format!("words-{vocab}"),
        representation: Representation::BagOfWords,
        num_classes: 2,
        baseline: 0,
        value_domain: Vec::new(),
        rule: None,
    }
}

/// Builds a case from a seed: colors, decoy or document payload with a
/// matching strategy, 0-4 flagged components and 1-5 copies.
pub fn ce_case(seed: u64) -> CeCase {
    let mut rng = rng_for(seed, 0);
    let copies = rng.gen_range(1..=5);
    let flagged_count = rng.gen_range(0..=4usize);
    let (task, x, y_hat, kind, labeled) = match rng.gen_range(0..3) {
        0 => {
            let rule = if rng.gen_bool(0.5) { ColorsRule::Corners } else { ColorsRule::TopMiddle };
            let task = colors_task(rule);
            let img = random_image(&mut rng, 5, 4);
            let payload = Payload::Image(img);
            let y = task.rule.unwrap().label(&payload).unwrap();
            let kind = *[StrategyKind::Randomize, StrategyKind::EnumerateAlternatives, StrategyKind::SubstituteFromClass]
                .choose(&mut rng)
                .unwrap();
            let donors = (0..4)
                .map(|_| {
                    let p = Payload::Image(random_image(&mut rng, 5, 4));
                    Example::new(task.instance(p).unwrap(), y, Provenance::Seed)
                })
                .collect();
            (task.clone(), task.instance(payload).unwrap(), y, kind, donors)
        }
        1 => {
            let task = decoy_task(4, 4);
            let img = random_image(&mut rng, 16, 256);
            let y = rng.gen_range(0..4);
            let kind = *[StrategyKind::Randomize, StrategyKind::EnumerateAlternatives, StrategyKind::SubstituteFromClass]
                .choose(&mut rng)
                .unwrap();
            let donors = (0..4)
                .map(|i| {
                    let p = Payload::Image(random_image(&mut rng, 16, 256));
                    Example::new(task.instance(p).unwrap(), if i < 2 { y } else { (y + 1) % 4 }, Provenance::Seed)
                })
                .collect();
            (task.clone(), task.instance(Payload::Image(img)).unwrap(), y, kind, donors)
        }
        _ => {
            let vocab = 12;
            let task = text_task(vocab);
            let len = rng.gen_range(1..=10);
            let tokens = (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect();
            let doc = Document::new(vocab, tokens).unwrap();
            let y = rng.gen_range(0..2);
            (task.clone(), task.instance(Payload::Document(doc)).unwrap(), y, StrategyKind::RemoveTokens, Vec::new())
        }
    };
    let mut components: Vec<usize> = x.present_components().collect();
    components.shuffle(&mut rng);
    components.truncate(flagged_count);
    CeCase {
        task,
        x,
        y_hat,
        correction: CorrectionSet {
            indices: components.into_iter().collect(),
            source: CorrectionSource::Simulated,
        },
        strategy: CounterexampleStrategy::new(kind, copies),
        labeled,
        seed: rng.gen(),
    }
}

fn footprint_pixels(case: &CeCase, component: usize) -> Vec<usize> {
    match case.task.representation.footprint(&case.x.payload, component).unwrap() {
        Footprint::Pixels(p) => p,
        Footprint::Word(_) => unreachable!("image case"),
    }
}

/// Checks the counterexample contract on one case. A second run bans part of
/// the first run's output through the test ids.
pub fn check_ce_case(case: &CeCase) -> Result<(), String> {
    let run = |test_ids: &BTreeSet<InstanceId>| {
        to_counterexamples(
            &case.x,
            case.y_hat,
            &case.correction,
            &case.strategy,
            &case.task,
            &case.labeled,
            test_ids,
            case.seed,
        )
        .map_err(|e| e.to_string())
    };
    let first = run(&BTreeSet::new())?;
    let c = case.strategy.copies;
    let flagged = case.correction.len();
    let acc = first.accounting;
    if first.examples.len() > c * flagged {
        return Err(format!("{} outputs exceed c|C| = {}", first.examples.len(), c * flagged));
    }
    if acc.produced != first.examples.len() || first.records.len() != first.examples.len() {
        return Err("accounting does not match output".into());
    }
    let candidates = acc.produced + acc.duplicates + acc.in_test + acc.inconsistent;
    let expected = c * (flagged - acc.emptied);
    match case.strategy.kind {
        StrategyKind::EnumerateAlternatives => {
            if candidates > expected {
                return Err(format!("{candidates} candidates from {expected} slots"));
            }
        }
        _ => {
            if candidates != expected {
                return Err(format!("{candidates} candidates, expected c(|C| - emptied) = {expected}"));
            }
        }
    }
    let mut ids = BTreeSet::from([case.x.id]);
    for (e, r) in first.examples.iter().zip(&first.records) {
        if e.label != case.y_hat || e.provenance != Provenance::Counterexample {
            return Err("label or provenance changed".into());
        }
        if !ids.insert(e.id()) || r.id != e.id() || r.parent != case.x.id {
            return Err("duplicate or misrecorded id".into());
        }
        if !case.correction.indices.contains(&r.component) {
            return Err(format!("component {} was not flagged", r.component));
        }
        match (&case.x.payload, &e.instance.payload) {
            (Payload::Image(a), Payload::Image(b)) => {
                let fp = footprint_pixels(case, r.component);
                for i in 0..a.len() {
                    if a.pixels()[i] != b.pixels()[i] && !fp.contains(&i) {
                        return Err(format!("pixel {i} outside the footprint of {} changed", r.component));
                    }
                }
            }
            (Payload::Document(a), Payload::Document(b)) => {
                let kept: Vec<u32> = a.tokens.iter().copied().filter(|&t| t as usize != r.component).collect();
                if b.tokens != kept {
                    return Err("token removal touched other words".into());
                }
            }
            _ => return Err("payload kind changed".into()),
        }
    }
    // ban every other produced id
    let banned: BTreeSet<InstanceId> = first.examples.iter().step_by(2).map(|e| e.id()).collect();
    let second = run(&banned)?;
    if second.examples.iter().any(|e| banned.contains(&e.id())) {
        return Err("test id leaked".into());
    }
    let want: Vec<InstanceId> = first.examples.iter().map(|e| e.id()).filter(|id| !banned.contains(id)).collect();
    let got: Vec<InstanceId> = second.examples.iter().map(|e| e.id()).collect();
    if want != got {
        return Err("excluding test ids changed the remaining output".into());
    }
    Ok(())
}

/// One step of a plain pool-based active learner.
#[derive(Clone, Debug, PartialEq)]
pub struct AlStep {
    pub query: InstanceId,
    pub labeled: usize,
    pub predictive: f64,
}

/// Fit, pick, ask the true label, refit: the loop without explanations or
/// counterexamples, using the session's seed streams.
pub fn classical_loop(setup: &SessionSetup) -> (Vec<AlStep>, Model) {
    let repr = setup.task.representation;
    let k = setup.task.num_classes;
    let truth: BTreeMap<InstanceId, usize> = setup.train.iter().map(|e| (e.id(), e.label)).collect();
    let test_ids: BTreeSet<InstanceId> = setup.test.iter().map(|e| e.id()).collect();
    let (mut labeled, pool) = stratified_seed_set(&setup.train, k, setup.session.seed_per_class, setup.seed).unwrap();
    let mut pool: Vec<_> = pool.into_iter().filter(|x| !test_ids.contains(&x.id)).collect();
    let mut model = learners::fit(&labeled, &repr, k, &setup.learner, None, fit_seed(setup.seed)).unwrap();
    let mut steps = Vec::new();
    for t in 1..=setup.session.budget {
        if pool.is_empty() {
            break;
        }
        let pick = select_query(&model, &pool, &repr, setup.query, &mut query_rng(setup.seed, t)).unwrap();
        let x = pool.remove(pick);
        labeled.push(Example::new(x.clone(), truth[&x.id], Provenance::QueryLabel));
        model = learners::fit(&labeled, &repr, k, &setup.learner, Some(&model), fit_seed(setup.seed)).unwrap();
        steps.push(AlStep {
            query: x.id,
            labeled: labeled.len(),
            predictive: learners::predictive_f1(&model, &setup.test, &repr).unwrap(),
        });
    }
    (steps, model)
}
