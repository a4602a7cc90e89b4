//! Turning explanation corrections into counterexamples.

use std::collections::BTreeSet;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CorrectionSet, Document, Example, Instance, InstanceId, Label, Payload, Provenance};
use crate::error::{CaipiError, Result};
use crate::repr::Footprint;
use crate::task::{rng_for, LabelRule, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Paint the footprint with a uniformly drawn value.
    Randomize,
    /// Paint the footprint with each alternative value in turn.
    EnumerateAlternatives,
    /// Copy the footprint from a random labeled example of the predicted class.
    SubstituteFromClass,
    /// Delete the flagged word from the document.
    RemoveTokens,
}

impl StrategyKind {
    fn name(self) -> &'static str {
        match self {
            StrategyKind::Randomize => "randomize",
            StrategyKind::EnumerateAlternatives => "enumerate-alternatives",
            StrategyKind::SubstituteFromClass => "substitute-from-class",
            StrategyKind::RemoveTokens => "remove-tokens",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CounterexampleStrategy {
    pub kind: StrategyKind,
    /// Copies per flagged component.
    #[serde(default = "d_copies")]
    pub copies: usize,
}

fn d_copies() -> usize {
    1
}

impl CounterexampleStrategy {
    pub fn new(kind: StrategyKind, copies: usize) -> Self {
        CounterexampleStrategy { kind, copies }
    }

    pub fn validate(&self) -> Result<()> {
        if self.copies == 0 {
            return Err(CaipiError::config("corrections.copies", "must be at least 1"));
        }
        Ok(())
    }

    fn check_payload(&self, payload: &Payload) -> Result<()> {
        let ok = matches!(
            (self.kind, payload),
            (StrategyKind::RemoveTokens, Payload::Document(_)) | (
                StrategyKind::Randomize | StrategyKind::EnumerateAlternatives | StrategyKind::SubstituteFromClass,
                Payload::Image(_)
            )
        );
        if ok {
            Ok(())
        } else {
            Err(CaipiError::StrategyMismatch {
                strategy: self.kind.name(),
                payload: payload.kind_name(),
            })
        }
    }
}

/// One line of the counterexample log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterexampleRecord {
    pub parent: InstanceId,
    pub component: usize,
    pub strategy: StrategyKind,
    pub id: InstanceId,
}

/// What happened to the candidates that did not make it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub produced: usize,
    /// Same id as the parent or an earlier candidate.
    pub duplicates: usize,
    pub in_test: usize,
    /// Rejected by the label-consistency filter.
    pub inconsistent: usize,
    /// Documents left without tokens.
    pub emptied: usize,
}

impl Accounting {
    pub fn add(&mut self, other: &Accounting) {
        self.produced += other.produced;
        self.duplicates += other.duplicates;
        self.in_test += other.in_test;
        self.inconsistent += other.inconsistent;
        self.emptied += other.emptied;
    }
}

#[derive(Clone, Debug, Default)]
pub struct Counterexamples {
    pub examples: Vec<Example>,
    pub records: Vec<CounterexampleRecord>,
    pub accounting: Accounting,
}

/// True iff `candidate` still carries label `y_hat` under `rule`. Without a
/// rule every candidate passes.
pub fn label_consistency_filter(candidate: &Payload, y_hat: Label, rule: Option<&LabelRule>) -> bool {
    match rule {
        Some(r) => r.label(candidate) == Some(y_hat),
        None => true,
    }
}

/// `doc` with every occurrence of the flagged words deleted, labeled `y_hat`.
/// Returns `None` when nothing would be left.
pub fn remove_tokens_counterexample(
    doc: &Document,
    y_hat: Label,
    flagged: &BTreeSet<usize>,
    task: &Task,
) -> Result<Option<Example>> {
    for &j in flagged {
        if !doc.contains(j as u32) {
            warn!("flagged word {j} does not occur in the document");
        }
    }
    let tokens: Vec<u32> = doc.tokens.iter().copied().filter(|t| !flagged.contains(&(*t as usize))).collect();
    if tokens.is_empty() {
        debug!("token removal emptied the document; discarded");
        return Ok(None);
    }
    let inst = task.instance(Payload::Document(Document::new(doc.vocab_size, tokens)?))?;
    Ok(Some(Example::new(inst, y_hat, Provenance::Counterexample)))
}

fn painted(payload: &Payload, pixels: &[usize], value: u16) -> Payload {
    let mut img = payload.as_image().expect("checked image payload").clone();
    for &p in pixels {
        img.set_flat(p, value);
    }
    Payload::Image(img)
}

/// Candidate payloads for one flagged component, before filtering.
#[allow(clippy::too_many_arguments)]
fn candidates(
    x: &Instance,
    y_hat: Label,
    component: usize,
    strategy: &CounterexampleStrategy,
    task: &Task,
    donors: &[&Example],
    seed: u64,
    emptied: &mut usize,
) -> Result<Vec<Payload>> {
    let mut rng = rng_for(seed, component as u64);
    let footprint = task.representation.footprint(&x.payload, component)?;
    let c = strategy.copies;
    let out = match (strategy.kind, footprint) {
        (StrategyKind::RemoveTokens, Footprint::Word(w)) => {
            let doc = x.payload.as_document().expect("checked document payload");
            let flagged = BTreeSet::from([w as usize]);
            let removed = remove_tokens_counterexample(doc, y_hat, &flagged, task)?;
            // further copies would be identical
            match removed {
                Some(e) => vec![e.instance.payload; c],
                None => {
                    *emptied += 1;
                    Vec::new()
                }
            }
        }
        (StrategyKind::Randomize, Footprint::Pixels(px)) => (0..c)
            .map(|_| {
                let v = *task.value_domain.choose(&mut rng).expect("nonempty value domain");
                painted(&x.payload, &px, v)
            })
            .collect(),
        (StrategyKind::EnumerateAlternatives, Footprint::Pixels(px)) => {
            let img = x.payload.as_image().expect("checked image payload");
            let mut alts: Vec<Payload> = task
                .value_domain
                .iter()
                .filter(|&&v| px.iter().any(|&p| img.pixels()[p] != v))
                .map(|&v| painted(&x.payload, &px, v))
                .filter(|p| label_consistency_filter(p, y_hat, task.rule.as_ref()))
                .collect();
            if alts.is_empty() {
                debug!("component {component} has no label-consistent alternative");
            }
            if alts.len() > c {
                alts.shuffle(&mut rng);
                alts.truncate(c);
            }
            alts
        }
        (StrategyKind::SubstituteFromClass, Footprint::Pixels(px)) => {
            if donors.is_empty() {
                debug!("no labeled donor of class {y_hat}; component {component} skipped");
                return Ok(Vec::new());
            }
            (0..c)
                .map(|_| {
                    let donor = donors[rng.gen_range(0..donors.len())];
                    let src = donor.instance.payload.as_image().expect("donor image");
                    let mut img = x.payload.as_image().expect("checked image payload").clone();
                    for &p in &px {
                        img.set_flat(p, src.pixels()[p]);
                    }
                    Payload::Image(img)
                })
                .collect()
        }
        (kind, _) => {
            return Err(CaipiError::StrategyMismatch {
                strategy: kind.name(),
                payload: x.payload.kind_name(),
            })
        }
    };
    Ok(out)
}

/// Counterexamples for every flagged component: up to `copies` altered copies
/// of `x`, each labeled `y_hat`. Copies that fail the task's label rule,
/// collide with the test set or repeat an earlier id are dropped.
#[allow(clippy::too_many_arguments)]
pub fn to_counterexamples(
    x: &Instance,
    y_hat: Label,
    correction: &CorrectionSet,
    strategy: &CounterexampleStrategy,
    task: &Task,
    labeled: &[Example],
    test_ids: &BTreeSet<InstanceId>,
    seed: u64,
) -> Result<Counterexamples> {
    strategy.validate()?;
    let mut out = Counterexamples::default();
    if correction.is_empty() {
        return Ok(out);
    }
    strategy.check_payload(&x.payload)?;
    if task.rule.is_none() && matches!(strategy.kind, StrategyKind::Randomize | StrategyKind::EnumerateAlternatives) {
        debug!("task {} has no label rule; consistency filter disabled", task.name);
    }
    let same_shape = |e: &&Example| match (&e.instance.payload, &x.payload) {
        (Payload::Image(a), Payload::Image(b)) => a.width == b.width && a.height == b.height,
        _ => false,
    };
    let donors: Vec<&Example> = labeled
        .iter()
        .filter(|e| e.label == y_hat && e.id() != x.id)
        .filter(same_shape)
        .collect();
    let mut seen = BTreeSet::from([x.id]);
    for &j in &correction.indices {
        for payload in candidates(x, y_hat, j, strategy, task, &donors, seed, &mut out.accounting.emptied)? {
            if !label_consistency_filter(&payload, y_hat, task.rule.as_ref()) {
                out.accounting.inconsistent += 1;
                continue;
            }
            let inst = task.instance(payload)?;
            if test_ids.contains(&inst.id) {
                out.accounting.in_test += 1;
                continue;
            }
            if !seen.insert(inst.id) {
                out.accounting.duplicates += 1;
                continue;
            }
            out.records.push(CounterexampleRecord {
                parent: x.id,
                component: j,
                strategy: strategy.kind,
                id: inst.id,
            });
            out.examples.push(Example::new(inst, y_hat, Provenance::Counterexample));
            out.accounting.produced += 1;
        }
    }
    Ok(out)
}
