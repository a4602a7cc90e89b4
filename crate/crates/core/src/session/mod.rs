//! The interactive loop: fit, query, predict, explain, collect feedback, turn
//! corrections into counterexamples, refit.
//!
//! [`Session`] is a stepper: [`Session::next_query`] prepares the next query
//! (idempotently) and [`Session::apply_feedback`] consumes the answer. The
//! in-process simulation and the HTTP service both drive it, so they produce
//! the same history for the same answers.

pub mod config;
pub mod cv;
pub mod passive;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrections::{to_counterexamples, CounterexampleRecord, CounterexampleStrategy};
use crate::data::{explanation_f1, CorrectionSet, CorrectionSource, Example, Explanation, Instance, InstanceId, Label, Pool, Provenance};
use crate::error::{CaipiError, Result};
use crate::learners::{self, decompose_weights, select_query, LearnerConfig, Model, QueryStrategy};
use crate::lime;
use crate::oracle::{CorrectionMode, Feedback, FeedbackCase, SimulatedAnnotator};
use crate::task::{derive_seed, rng_for, GoldStandard, Hyperplane, Task};

pub use config::{DatasetConfig, ExperimentConfig, ExplainerConfig, KPolicy, QueryConfig, SessionConfig};
pub use cv::{cross_validate, fold_setups, Aggregate, CvResult, FoldResult, MeanStd};
pub use passive::{decoy_table, DecoyRow};

const STREAM_SEED_SET: u64 = 10;
const STREAM_FIT: u64 = 11;
const STREAM_QUERY: u64 = 12;
const STREAM_EXPLAIN: u64 = 13;
const STREAM_COUNTER: u64 = 14;
const STREAM_TEST_SUBSET: u64 = 15;
const STREAM_TEST_EXPLAIN: u64 = 16;

/// Iterations the test metric must stay flat before a session counts as converged.
pub const CONVERGENCE_WINDOW: usize = 25;
const CONVERGENCE_TOL: f64 = 1e-3;

/// Random stream used to pick the query of iteration `t` (1-based).
pub fn query_rng(session_seed: u64, t: usize) -> ChaCha8Rng {
    rng_for(derive_seed(session_seed, STREAM_QUERY), t as u64)
}

/// Seed passed to every fit of a session.
pub fn fit_seed(session_seed: u64) -> u64 {
    derive_seed(session_seed, STREAM_FIT)
}

/// Everything one session needs.
#[derive(Clone, Debug)]
pub struct SessionSetup {
    pub task: Task,
    pub gold: GoldStandard,
    pub reference: Option<[Hyperplane; 2]>,
    /// Examples whose instances form the seed set and the unlabeled pool.
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub learner: LearnerConfig,
    pub query: QueryStrategy,
    pub explainer: ExplainerConfig,
    pub k_policy: KPolicy,
    pub session: SessionConfig,
    pub corrections: CounterexampleStrategy,
    pub seed: u64,
}

impl SessionSetup {
    /// The simulated annotator for this setup.
    pub fn annotator(&self) -> Result<SimulatedAnnotator> {
        SimulatedAnnotator::new(&self.train, self.task.rule, self.gold.clone(), self.session.corrections)
            .with_drop_probability(self.session.drop_probability, derive_seed(self.seed, 0xD0))
    }
}

/// `per_class` examples of every class, drawn with `seed`; the rest stay unlabeled.
pub fn stratified_seed_set(
    train: &[Example],
    num_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Instance>)> {
    let mut seen = BTreeSet::new();
    let train: Vec<&Example> = train.iter().filter(|e| seen.insert(e.id())).collect();
    let mut rng = rng_for(seed, STREAM_SEED_SET);
    let mut picked = BTreeSet::new();
    for y in 0..num_classes {
        let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train[i].label == y).collect();
        if idx.len() < per_class {
            return Err(CaipiError::InvalidInput(format!(
                "class {y} has {} training examples, fewer than the {per_class} seed examples required",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        picked.extend(idx.into_iter().take(per_class));
    }
    let mut seeds = Vec::new();
    let mut unlabeled = Vec::new();
    for (i, e) in train.iter().enumerate() {
        if picked.contains(&i) {
            seeds.push(Example::new(e.instance.clone(), e.label, Provenance::Seed));
        } else {
            unlabeled.push(e.instance.clone());
        }
    }
    Ok((seeds, unlabeled))
}

/// One query as shown to the annotator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    /// 1-based iteration this query belongs to.
    pub iteration: usize,
    pub budget: usize,
    pub instance: Instance,
    pub predicted: Label,
    pub explanation: Explanation,
    /// Corrections are ignored during burn-in.
    pub burn_in: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub alpha0: f64,
    pub alpha1: f64,
    pub residual: f64,
}

/// Metrics after one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub t: usize,
    pub query: InstanceId,
    pub case: FeedbackCase,
    /// Test F1 of the positive class (accuracy for more than two classes).
    pub predictive: f64,
    /// F1 of the query's explanation against the gold mask.
    pub instantaneous_f1: f64,
    /// Running mean of `instantaneous_f1`.
    pub cumulative_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_explanation_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Decomposition>,
    pub counterexamples: usize,
    pub labeled: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Running,
    /// Budget spent or pool empty.
    Exhausted,
    Converged,
}

/// Mean explanation F1 over `subset`, explaining each instance's predicted
/// label; `None` for an empty subset.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_explanations_on_test(
    model: &Model,
    subset: &[Example],
    gold: &GoldStandard,
    task: &Task,
    explainer: &ExplainerConfig,
    k_policy: KPolicy,
    seed: u64,
) -> Result<Option<f64>> {
    if subset.is_empty() {
        return Ok(None);
    }
    let scores: Vec<f64> = subset
        .par_iter()
        .enumerate()
        .map(|(i, e)| -> Result<f64> {
            let x = &e.instance;
            let mask = gold.mask_for(x);
            let expl = explain_instance(model, x, task, explainer, k_policy, &mask, derive_seed(seed, i as u64))?;
            Ok(explanation_f1(&expl.indices(), &mask))
        })
        .collect::<Result<_>>()?;
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

fn resolve_k(policy: KPolicy, mask: &crate::data::RelevanceMask, d: usize) -> usize {
    match policy {
        KPolicy::Fixed(k) => k,
        KPolicy::GoldPresent => mask.len().max(1),
    }
    .min(d)
}

/// Explanation of the model's prediction on `x`; degenerate models get an empty one.
fn explain_instance(
    model: &Model,
    x: &Instance,
    task: &Task,
    explainer: &ExplainerConfig,
    k_policy: KPolicy,
    mask: &crate::data::RelevanceMask,
    seed: u64,
) -> Result<Explanation> {
    let features = task.representation.features(&x.payload)?;
    let predicted = model.predict(&features)?;
    let k = resolve_k(k_policy, mask, x.dim());
    if model.is_degenerate() {
        let mut e = Explanation::empty(k, predicted);
        e.seed = seed;
        return Ok(e);
    }
    lime::explain(model, x, predicted, &task.representation, task.baseline, &explainer.lime(k, seed))
}

/// A running CAIPI session.
#[derive(Clone, Debug)]
pub struct Session {
    setup: SessionSetup,
    pool: Pool,
    test_ids: BTreeSet<InstanceId>,
    test_subset: Vec<Example>,
    model: Model,
    t: usize,
    history: Vec<MetricRecord>,
    pending: Option<Query>,
    status: Status,
    f1_sum: f64,
    counterexample_log: Vec<CounterexampleRecord>,
}

impl Session {
    /// Draws the seed set and fits the initial model.
    pub fn new(setup: SessionSetup) -> Result<Self> {
        setup.learner.validate()?;
        setup.corrections.validate()?;
        let (seeds, unlabeled) =
            stratified_seed_set(&setup.train, setup.task.num_classes, setup.session.seed_per_class, setup.seed)?;
        let test_ids: BTreeSet<InstanceId> = setup.test.iter().map(|e| e.id()).collect();
        let unlabeled: Vec<Instance> = unlabeled.into_iter().filter(|x| !test_ids.contains(&x.id)).collect();
        let pool = Pool::new(seeds, unlabeled)?;
        let mut order: Vec<usize> = (0..setup.test.len()).collect();
        order.shuffle(&mut rng_for(setup.seed, STREAM_TEST_SUBSET));
        let test_subset = order
            .into_iter()
            .take(setup.session.test_subsample)
            .map(|i| setup.test[i].clone())
            .collect();
        let model = learners::fit(
            pool.labeled(),
            &setup.task.representation,
            setup.task.num_classes,
            &setup.learner,
            None,
            fit_seed(setup.seed),
        )?;
        let status = if setup.session.budget == 0 || pool.unlabeled().is_empty() {
            Status::Exhausted
        } else {
            Status::Running
        };
        Ok(Session {
            setup,
            pool,
            test_ids,
            test_subset,
            model,
            t: 0,
            history: Vec::new(),
            pending: None,
            status,
            f1_sum: 0.0,
            counterexample_log: Vec::new(),
        })
    }

    pub fn setup(&self) -> &SessionSetup {
        &self.setup
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn history(&self) -> &[MetricRecord] {
        &self.history
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn counterexample_log(&self) -> &[CounterexampleRecord] {
        &self.counterexample_log
    }

    pub fn into_parts(self) -> (Model, Vec<MetricRecord>, Vec<CounterexampleRecord>) {
        (self.model, self.history, self.counterexample_log)
    }

    /// The pending query, computing it if needed. Repeated calls return the same query.
    pub fn next_query(&mut self) -> Result<&Query> {
        if self.pending.is_none() {
            if self.status != Status::Running {
                return Err(CaipiError::SessionFinished);
            }
            let query = self.prepare_query()?;
            self.pending = Some(query);
        }
        Ok(self.pending.as_ref().expect("pending query"))
    }

    fn prepare_query(&self) -> Result<Query> {
        let iteration = self.t + 1;
        let repr = &self.setup.task.representation;
        let mut rng = query_rng(self.setup.seed, iteration);
        let pick = select_query(&self.model, self.pool.unlabeled(), repr, self.setup.query, &mut rng)?;
        let instance = self.pool.unlabeled()[pick].clone();
        let mask = self.setup.gold.mask_for(&instance);
        let seed = derive_seed(derive_seed(self.setup.seed, STREAM_EXPLAIN), iteration as u64);
        let explanation = explain_instance(
            &self.model,
            &instance,
            &self.setup.task,
            &self.setup.explainer,
            self.setup.k_policy,
            &mask,
            seed,
        )?;
        Ok(Query {
            iteration,
            budget: self.setup.session.budget,
            predicted: explanation.target_label,
            instance,
            explanation,
            burn_in: iteration <= self.setup.session.burn_in,
        })
    }

    /// Applies an answer to the pending query and refits. A feedback carrying
    /// an iteration number must match the pending iteration.
    pub fn apply_feedback(&mut self, feedback: &Feedback, source: CorrectionSource) -> Result<&MetricRecord> {
        self.next_query()?;
        let query = self.pending.as_ref().expect("pending query");
        if let Some(it) = feedback.iteration {
            if it != query.iteration {
                return Err(CaipiError::StaleIteration {
                    expected: query.iteration,
                    got: it,
                });
            }
        }
        if feedback.label >= self.setup.task.num_classes {
            return Err(CaipiError::InvalidInput(format!("label {} out of range", feedback.label)));
        }
        let case = feedback.case(query.predicted);
        let correction = if query.burn_in || self.setup.session.corrections == CorrectionMode::Disabled {
            CorrectionSet::empty(source)
        } else {
            feedback.correction(&query.explanation, source)?
        };
        let query = self.pending.take().expect("pending query");
        let x = query.instance;
        let mask = self.setup.gold.mask_for(&x);
        let instantaneous = explanation_f1(&query.explanation.indices(), &mask);

        self.pool.add_labeled(Example::new(x.clone(), feedback.label, Provenance::QueryLabel));
        let mut added = 0;
        if !correction.is_empty() {
            let seed = derive_seed(derive_seed(self.setup.seed, STREAM_COUNTER), query.iteration as u64);
            let out = to_counterexamples(
                &x,
                feedback.label,
                &correction,
                &self.setup.corrections,
                &self.setup.task,
                self.pool.labeled(),
                &self.test_ids,
                seed,
            )?;
            for (example, record) in out.examples.into_iter().zip(out.records) {
                if self.pool.add_labeled(example) {
                    added += 1;
                    self.counterexample_log.push(record);
                }
            }
        }
        let repr = &self.setup.task.representation;
        self.model = learners::fit(
            self.pool.labeled(),
            repr,
            self.setup.task.num_classes,
            &self.setup.learner,
            Some(&self.model),
            fit_seed(self.setup.seed),
        )?;
        self.t = query.iteration;
        self.f1_sum += instantaneous;
        let predictive = learners::predictive_f1(&self.model, &self.setup.test, repr)?;
        let test_explanation_f1 = if self.t % self.setup.session.test_cadence == 0 {
            evaluate_explanations_on_test(
                &self.model,
                &self.test_subset,
                &self.setup.gold,
                &self.setup.task,
                &self.setup.explainer,
                self.setup.k_policy,
                derive_seed(self.setup.seed, STREAM_TEST_EXPLAIN),
            )?
        } else {
            None
        };
        let decomposition = match (&self.setup.reference, self.model.linear_weights()) {
            (Some([w0, w1]), Some(w)) if self.setup.task.num_classes == 2 => {
                let d = decompose_weights(w, &w0.weights, &w1.weights)?;
                Some(Decomposition {
                    alpha0: d.alpha0,
                    alpha1: d.alpha1,
                    residual: d.residual,
                })
            }
            _ => None,
        };
        self.history.push(MetricRecord {
            t: self.t,
            query: x.id,
            case,
            predictive,
            instantaneous_f1: instantaneous,
            cumulative_f1: self.f1_sum / self.t as f64,
            test_explanation_f1,
            decomposition,
            counterexamples: added,
            labeled: self.pool.labeled().len(),
        });
        self.update_status();
        Ok(self.history.last().expect("just pushed"))
    }

    fn update_status(&mut self) {
        if self.t >= self.setup.session.budget || self.pool.unlabeled().is_empty() {
            self.status = Status::Exhausted;
        } else if self.setup.session.stop_on_convergence && self.history.len() > CONVERGENCE_WINDOW {
            let tail = &self.history[self.history.len() - CONVERGENCE_WINDOW - 1..];
            if tail.windows(2).all(|w| (w[1].predictive - w[0].predictive).abs() < CONVERGENCE_TOL) {
                self.status = Status::Converged;
            }
        }
    }
}

/// Drives a session to the end with a simulated annotator.
pub fn run_session(session: &mut Session, oracle: &SimulatedAnnotator) -> Result<()> {
    loop {
        let query = match session.next_query() {
            Ok(q) => q,
            Err(CaipiError::SessionFinished) => return Ok(()),
            Err(e) => return Err(e),
        };
        let mut feedback = oracle.respond(&query.instance, query.predicted, &query.explanation)?;
        feedback.iteration = Some(query.iteration);
        session.apply_feedback(&feedback, CorrectionSource::Simulated)?;
    }
}

/// Counts per feedback case over a history.
pub fn case_counts(history: &[MetricRecord]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in history {
        let key = serde_json::to_value(r.case).expect("case serializes");
        *out.entry(key.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
    }
    out
}
