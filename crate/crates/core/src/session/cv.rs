//! Cross-validated runs and per-iteration aggregation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_session, ExperimentConfig, MetricRecord, Session, SessionSetup, Status};
use crate::corrections::CounterexampleRecord;
use crate::error::Result;
use crate::learners::Model;
use crate::task::{derive_seed, rng_for};

/// One setup per fold. Tasks with a fixed test split reuse it in every fold
/// (folds then differ only in their seeds); otherwise the shuffled examples are
/// dealt into `folds` parts and each part serves once as the test set. A
/// single fold holds out a tenth of the data.
pub fn fold_setups(config: &ExperimentConfig) -> Result<Vec<SessionSetup>> {
    config.validate()?;
    let data = config.load_data()?;
    let k_policy = config.k_policy()?;
    let folds = config.folds;
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    order.shuffle(&mut rng_for(config.seed, 2));
    let fold_seed = |f: usize| derive_seed(derive_seed(config.seed, 3), f as u64);
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let (train, test) = match &data.test {
            Some(test) => (data.examples.clone(), test.clone()),
            None => {
                let is_test = |pos: usize| {
                    if folds == 1 {
                        pos < data.examples.len().div_ceil(10)
                    } else {
                        pos % folds == f
                    }
                };
                let mut train = Vec::new();
                let mut test = Vec::new();
                for (pos, &i) in order.iter().enumerate() {
                    if is_test(pos) {
                        test.push(data.examples[i].clone());
                    } else {
                        train.push(data.examples[i].clone());
                    }
                }
                (train, test)
            }
        };
        out.push(SessionSetup {
            task: data.task.clone(),
            gold: data.gold.clone(),
            reference: data.reference.clone(),
            train,
            test,
            learner: config.learner.clone(),
            query: config.query.strategy,
            explainer: config.explainer.clone(),
            k_policy,
            session: config.session.clone(),
            corrections: config.corrections,
            seed: fold_seed(f),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub status: Status,
    pub model: Model,
    pub history: Vec<MetricRecord>,
    pub counterexamples: Vec<CounterexampleRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        if values.iter().all(|&v| v == values[0]) {
            return Some(MeanStd { mean: values[0], std: 0.0 });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

/// Fold statistics of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub t: usize,
    pub folds: usize,
    pub predictive: MeanStd,
    pub instantaneous_f1: MeanStd,
    pub cumulative_f1: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_explanation_f1: Option<MeanStd>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<MeanStd>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<MeanStd>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<MeanStd>,
    pub counterexamples: MeanStd,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub curves: Vec<Aggregate>,
}

/// Aggregates histories per iteration over the folds that reached it.
pub fn aggregate(histories: &[&[MetricRecord]]) -> Vec<Aggregate> {
    let len = histories.iter().map(|h| h.len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let rows: Vec<&MetricRecord> = histories.iter().filter_map(|h| h.get(i)).collect();
        let pick = |f: &dyn Fn(&MetricRecord) -> Option<f64>| -> Option<MeanStd> {
            let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            MeanStd::of(&v)
        };
        let always = |f: &dyn Fn(&MetricRecord) -> f64| pick(&|r| Some(f(r))).expect("at least one fold");
        out.push(Aggregate {
            t: i + 1,
            folds: rows.len(),
            predictive: always(&|r| r.predictive),
            instantaneous_f1: always(&|r| r.instantaneous_f1),
            cumulative_f1: always(&|r| r.cumulative_f1),
            test_explanation_f1: pick(&|r| r.test_explanation_f1),
            alpha0: pick(&|r| r.decomposition.map(|d| d.alpha0)),
            alpha1: pick(&|r| r.decomposition.map(|d| d.alpha1)),
            residual: pick(&|r| r.decomposition.map(|d| d.residual)),
            counterexamples: always(&|r| r.counterexamples as f64),
        });
    }
    out
}

/// Runs one simulated session per fold (in parallel) and aggregates the curves.
pub fn cross_validate(config: &ExperimentConfig) -> Result<CvResult> {
    let setups = fold_setups(config)?;
    run_setups(setups)
}

/// Runs prepared setups with their simulated annotators.
pub fn run_setups(setups: Vec<SessionSetup>) -> Result<CvResult> {
    let folds: Vec<FoldResult> = setups
        .into_par_iter()
        .enumerate()
        .map(|(fold, setup)| -> Result<FoldResult> {
            let oracle = setup.annotator()?;
            let seed = setup.seed;
            let mut session = Session::new(setup)?;
            run_session(&mut session, &oracle)?;
            let status = session.status();
            let (model, history, counterexamples) = session.into_parts();
            Ok(FoldResult {
                fold,
                seed,
                status,
                model,
                history,
                counterexamples,
            })
        })
        .collect::<Result<_>>()?;
    let histories: Vec<&[MetricRecord]> = folds.iter().map(|f| f.history.as_slice()).collect();
    let curves = aggregate(&histories);
    Ok(CvResult { folds, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::config::ExperimentConfig;

    fn toy(folds: usize) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
seed = 2
folds = {folds}
[dataset]
kind = "toy-corners"
n = 100
[learner]
kind = "linear"
loss = "squared-hinge"
regularizer = "l2"
[explainer]
samples = 200
runs = 2
[session]
budget = 6
burn-in = 2
test-subsample = 4
test-cadence = 3
[corrections]
kind = "randomize"
copies = 2
"#
        ))
        .unwrap()
    }

    #[test]
    fn folds_partition_the_data() {
        let setups = fold_setups(&toy(5)).unwrap();
        assert_eq!(setups.len(), 5);
        assert_eq!(setups.iter().map(|s| s.test.len()).sum::<usize>(), 100);
        for s in &setups {
            assert_eq!(s.train.len() + s.test.len(), 100);
        }
        let single = fold_setups(&toy(1)).unwrap();
        assert_eq!(single[0].test.len(), 10);
    }

    #[test]
    fn identical_folds_have_zero_spread() {
        let setups = fold_setups(&toy(3)).unwrap();
        let same = vec![setups[0].clone(), setups[0].clone(), setups[0].clone()];
        let res = run_setups(same).unwrap();
        for a in &res.curves {
            assert_eq!(a.folds, 3);
            assert_eq!(a.predictive.std, 0.0);
            assert_eq!(a.instantaneous_f1.std, 0.0);
        }
    }

    #[test]
    fn single_fold_curves_equal_its_history() {
        let res = cross_validate(&toy(1)).unwrap();
        assert_eq!(res.curves.len(), res.folds[0].history.len());
        for (a, r) in res.curves.iter().zip(&res.folds[0].history) {
            assert_eq!(a.predictive.mean, r.predictive);
            assert_eq!(a.cumulative_f1.mean, r.cumulative_f1);
        }
    }

    #[test]
    fn mean_std_of_values() {
        let m = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert!(MeanStd::of(&[]).is_none());
    }
}
