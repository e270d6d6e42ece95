//! Accuracy curves, AUAC, and the experiment grid runner.
//!
//! A cell is one `(dataset, scenario, pct, strategy, seed)` session with a
//! simulated labeler. Test accuracy is sampled after every query, abstained
//! ones included, and the cell's score is the area under that curve
//! normalized to `[0, 100]`.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Belief, Session, SessionParams, TruthLabeler};
use crate::error::{Error, Result};
use crate::ingest::{synth_text_like, Dataset, SynthSpec};
use crate::map::{MapBelief, MapConfig};
use crate::scenario::{
    fit_oracle_estimator, gen_easy_hard, gen_unrelated, Scenario, ScenarioKind, Truth, GENERATOR_SIGMA2,
};
use crate::strategy::{Selector, StrategyKind};
use crate::types::{Example, LabelAlphabet, SessionTrace};

/// Labeled examples held out from the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub examples: Vec<Example>,
    pub labels: Vec<u32>,
}

impl TestSet {
    pub fn from_dataset(data: &Dataset) -> TestSet {
        TestSet { examples: data.examples(), labels: data.labels.clone() }
    }
}

/// Most probable label; ties go to the lower label.
pub fn predicted_label(dist: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best as u32 + 1
}

/// Fraction of test examples whose predicted label is correct.
pub fn accuracy<B: Belief>(belief: &B, test: &TestSet) -> Result<f64> {
    if test.examples.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in test.examples.iter().zip(&test.labels) {
        if predicted_label(&belief.predict(x)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.examples.len() as f64)
}

/// `100 · mean(curve)`.
pub fn auac(curve: &[f64]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::Input("empty accuracy curve".into()));
    }
    Ok(100.0 * curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Where a dataset's rows come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Regenerated per seed; the cell seed is mixed into `SynthSpec::seed`.
    Synth(SynthSpec),
    /// Loaded once; the cell seed only drives sampling and splits.
    Fixed { target: Arc<Dataset>, redundant: Option<Arc<Dataset>> },
}

#[derive(Debug, Clone)]
pub struct ExperimentDataset {
    pub name: String,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    pub kind: ScenarioKind,
    pub pcts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_learner_sigma2")]
    pub learner_sigma2: f64,
    #[serde(default = "default_generator_sigma2")]
    pub generator_sigma2: f64,
}

fn default_budget() -> usize {
    150
}
fn default_pool_size() -> usize {
    600
}
fn default_test_size() -> usize {
    300
}
fn default_learner_sigma2() -> f64 {
    1.0
}
fn default_generator_sigma2() -> f64 {
    GENERATOR_SIGMA2
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            budget: default_budget(),
            pool_size: default_pool_size(),
            test_size: default_test_size(),
            learner_sigma2: default_learner_sigma2(),
            generator_sigma2: default_generator_sigma2(),
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Input("budget must be at least 1".into()));
        }
        if self.pool_size == 0 || self.test_size == 0 {
            return Err(Error::Input("pool and test sizes must be positive".into()));
        }
        for (name, v) in [("learner_sigma2", self.learner_sigma2), ("generator_sigma2", self.generator_sigma2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// The full grid.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub datasets: Vec<ExperimentDataset>,
    pub scenarios: Vec<ScenarioGrid>,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    pub settings: ExperimentSettings,
}

/// A scenario instance with its held-out test set.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub test: TestSet,
}

fn mix_seed(base: u64, seed: u64) -> u64 {
    base ^ seed.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds the pool, labeler behavior and test set of one grid point. A pure
/// function of its arguments.
pub fn prepare_scenario(
    dataset: &ExperimentDataset,
    kind: ScenarioKind,
    pct: f64,
    seed: u64,
    settings: &ExperimentSettings,
) -> Result<PreparedScenario> {
    let (target, redundant) = match &dataset.source {
        DataSource::Synth(spec) => {
            let data = synth_text_like(&SynthSpec { seed: mix_seed(spec.seed, seed), ..*spec })?;
            let (t, r) = data.split_by_source();
            (Arc::new(t), Arc::new(r))
        }
        DataSource::Fixed { target, redundant } => (
            target.clone(),
            redundant.clone().unwrap_or_else(|| Arc::new(target.subset(&[]))),
        ),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(0x5eed, seed));
    let mut rows: Vec<usize> = (0..target.len()).collect();
    rows.shuffle(&mut rng);
    if rows.len() < settings.test_size {
        return Err(Error::Input(format!(
            "dataset '{}' has {} target rows, fewer than the test size {}",
            dataset.name,
            rows.len(),
            settings.test_size
        )));
    }
    let test = TestSet::from_dataset(&target.subset(&rows[..settings.test_size]));
    let rest = target.subset(&rows[settings.test_size..]);
    let scenario = match kind {
        ScenarioKind::Unrelated => gen_unrelated(&rest, &redundant, pct, settings.pool_size, seed)?,
        ScenarioKind::Easy | ScenarioKind::Hard => {
            if rest.len() < settings.pool_size {
                return Err(Error::Input(format!(
                    "dataset '{}' has {} rows left for a pool of {}",
                    dataset.name,
                    rest.len(),
                    settings.pool_size
                )));
            }
            let pool_rows: Vec<usize> = (0..settings.pool_size).collect();
            let pool_data = rest.subset(&pool_rows);
            let confidence = gen_easy_hard(&pool_data, kind, pct, settings.generator_sigma2)?;
            let truth = Truth::fully_labeled(&pool_data.labels, confidence.pattern, LabelAlphabet::BINARY)?;
            Scenario { pool: Arc::new(pool_data.pool()), truth }
        }
    };
    Ok(PreparedScenario { scenario, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub scenario: ScenarioKind,
    pub pct: f64,
    pub strategy: StrategyKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub key: CellKey,
    pub result: std::result::Result<CellRun, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub auac: f64,
    pub curve: Vec<f64>,
    pub trace: SessionTrace,
}

/// Runs one session on a prepared scenario and records its accuracy curve.
pub fn run_cell(
    prepared: &PreparedScenario,
    strategy: StrategyKind,
    seed: u64,
    settings: &ExperimentSettings,
    oracle_rates: Option<&[f64]>,
) -> Result<CellRun> {
    let pool = prepared.scenario.pool.clone();
    let selector = if strategy.needs_oracle() {
        let rates = match oracle_rates {
            Some(r) => r.to_vec(),
            None => {
                fit_oracle_estimator(&pool, prepared.scenario.truth.abstention_pattern(), settings.learner_sigma2)?
                    .rates(&pool)
            }
        };
        Selector::with_fixed_rates(strategy, rates)?
    } else {
        Selector::new(strategy)?
    };
    let belief = MapBelief::new(pool, MapConfig::isotropic(settings.learner_sigma2)?)?;
    let params = SessionParams { budget: settings.budget, seed, record_scores: false };
    let mut session = Session::new(belief, selector, params)?;
    let mut curve = Vec::with_capacity(settings.budget);
    let mut failure = None;
    session.run_with(&mut TruthLabeler(&prepared.scenario.truth), |belief, _| {
        match accuracy(belief, &prepared.test) {
            Ok(a) => curve.push(a),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (trace, _) = session.into_parts();
    Ok(CellRun { auac: auac(&curve)?, curve, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub scenario: ScenarioKind,
    pub pct: f64,
    pub strategy: StrategyKind,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub settings: ExperimentSettings,
    pub cells: Vec<CellOutcome>,
}

/// Mean and sample standard deviation, summed in seed order so the result
/// does not depend on the order seeds were listed in.
pub fn aggregate(values: &[(u64, f64)]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = sorted.len() as f64;
    let mean = sorted.iter().map(|v| v.1).sum::<f64>() / n;
    let var = if sorted.len() > 1 {
        sorted.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = (&CellKey, &str)> {
        self.cells.iter().filter_map(|c| c.result.as_ref().err().map(|e| (&c.key, e.as_str())))
    }

    pub fn all_succeeded(&self) -> bool {
        self.failures().next().is_none()
    }

    /// One row per `(dataset, scenario, pct, strategy)`, in grid order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = Vec::new();
        let mut values: Vec<Vec<(u64, f64)>> = Vec::new();
        for cell in &self.cells {
            let k = &cell.key;
            let idx = match rows.iter().position(|r| {
                r.dataset == k.dataset && r.scenario == k.scenario && r.pct == k.pct && r.strategy == k.strategy
            }) {
                Some(i) => i,
                None => {
                    rows.push(SummaryRow {
                        dataset: k.dataset.clone(),
                        scenario: k.scenario,
                        pct: k.pct,
                        strategy: k.strategy,
                        mean: None,
                        std: None,
                        runs: 0,
                        failed: 0,
                    });
                    values.push(Vec::new());
                    rows.len() - 1
                }
            };
            match &cell.result {
                Ok(run) => {
                    rows[idx].runs += 1;
                    values[idx].push((k.seed, run.auac));
                }
                Err(_) => rows[idx].failed += 1,
            }
        }
        for (row, v) in rows.iter_mut().zip(&values) {
            if let Some((mean, std)) = aggregate(v) {
                row.mean = Some(mean);
                row.std = Some(std);
            }
        }
        rows
    }

    /// Mean AUAC of a summary cell, if any run succeeded.
    pub fn mean_auac(&self, dataset: &str, scenario: ScenarioKind, pct: f64, strategy: StrategyKind) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.dataset == dataset && r.scenario == scenario && r.pct == pct && r.strategy == strategy)
            .and_then(|r| r.mean)
    }

    /// `dataset,scenario,pct,strategy,seed,auac`; failed cells leave `auac`
    /// empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dataset", "scenario", "pct", "strategy", "seed", "auac"]).map_err(csv_error)?;
        for cell in &self.cells {
            let k = &cell.key;
            let auac = cell.result.as_ref().map(|r| r.auac.to_string()).unwrap_or_default();
            out.write_record([
                k.dataset.clone(),
                k.scenario.to_string(),
                k.pct.to_string(),
                k.strategy.to_string(),
                k.seed.to_string(),
                auac,
            ])
            .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let failures: Vec<_> = self
            .failures()
            .map(|(k, e)| serde_json::json!({ "cell": k, "error": e }))
            .collect();
        serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "settings": self.settings,
            "cells": self.cells.len(),
            "summary": self.summary(),
            "failures": failures,
        })
    }

    /// One JSON object per successful cell with its accuracy curve.
    pub fn write_curves<W: Write>(&self, mut w: W) -> Result<()> {
        for cell in &self.cells {
            if let Ok(run) = &cell.result {
                let line = serde_json::json!({ "cell": cell.key, "auac": run.auac, "curve": run.curve });
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Runs every cell of the grid, in parallel when a thread count above one
/// is given. Results are in grid order whatever the schedule; failed cells
/// are recorded and the rest continue.
pub fn run_experiment(experiment: &Experiment, threads: Option<usize>) -> Result<ExperimentReport> {
    experiment.settings.validate()?;
    if experiment.datasets.is_empty()
        || experiment.scenarios.iter().all(|s| s.pcts.is_empty())
        || experiment.strategies.is_empty()
        || experiment.seeds.is_empty()
    {
        return Err(Error::Input("experiment grid is empty".into()));
    }
    for grid in &experiment.scenarios {
        if let Some(p) = grid.pcts.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Input(format!("abstention percentage {p} outside [0, 1]")));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    Ok(pool.install(|| run_grid(experiment)))
}

/// A prepared grid point with its oracle rates, or why it could not be built.
type PreparedPoint = std::result::Result<(PreparedScenario, Option<Vec<f64>>), String>;

struct Point<'a> {
    dataset: &'a ExperimentDataset,
    kind: ScenarioKind,
    pct: f64,
    seed: u64,
}

fn run_grid(experiment: &Experiment) -> ExperimentReport {
    let settings = &experiment.settings;
    let mut points = Vec::new();
    for dataset in &experiment.datasets {
        for grid in &experiment.scenarios {
            for &pct in &grid.pcts {
                for &seed in &experiment.seeds {
                    points.push(Point { dataset, kind: grid.kind, pct, seed });
                }
            }
        }
    }
    let needs_oracle = experiment.strategies.iter().any(|s| s.needs_oracle());
    let prepared: Vec<PreparedPoint> = points
        .par_iter()
        .map(|p| {
            let prepared = prepare_scenario(p.dataset, p.kind, p.pct, p.seed, settings)?;
            let rates = if needs_oracle {
                let pool = &prepared.scenario.pool;
                Some(
                    fit_oracle_estimator(pool, prepared.scenario.truth.abstention_pattern(), settings.learner_sigma2)?
                        .rates(pool),
                )
            } else {
                None
            };
            Ok((prepared, rates))
        })
        .map(|r: Result<_>| r.map_err(|e| e.to_string()))
        .collect();

    let jobs: Vec<(usize, StrategyKind)> = (0..points.len())
        .flat_map(|i| experiment.strategies.iter().map(move |&s| (i, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(i, strategy)| {
            let p = &points[i];
            let key = CellKey { dataset: p.dataset.name.clone(), scenario: p.kind, pct: p.pct, strategy, seed: p.seed };
            let result = match &prepared[i] {
                Ok((prep, rates)) => {
                    run_cell(prep, strategy, p.seed, settings, rates.as_deref()).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.clone()),
            };
            CellOutcome { key, result }
        })
        .collect();
    ExperimentReport { settings: *settings, cells }
}

/// Convenience for tests and tools: a synthetic dataset entry.
pub fn synthetic_dataset(name: &str, spec: SynthSpec) -> ExperimentDataset {
    ExperimentDataset { name: name.into(), source: DataSource::Synth(spec) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::DiscreteBelief;
    use crate::map::LinearModel;
    use crate::types::SparseVector;

    #[test]
    fn auac_examples() {
        assert_eq!(auac(&[1.0; 5]).unwrap(), 100.0);
        assert_eq!(auac(&[0.5; 7]).unwrap(), 50.0);
        assert_eq!(auac(&[0.5, 1.0]).unwrap(), 75.0);
        assert!(auac(&[]).is_err());
    }

    #[test]
    fn ties_predict_the_lower_label() {
        assert_eq!(predicted_label(&[0.5, 0.5]), 1);
        assert_eq!(predicted_label(&[0.2, 0.4, 0.4]), 2);
        assert_eq!(predicted_label(&[0.1, 0.9]), 2);
    }

    fn test_set(labels: &[u32]) -> TestSet {
        TestSet {
            examples: labels
                .iter()
                .enumerate()
                .map(|(id, _)| Example { id, features: SparseVector::new([(0, 1.0)]).unwrap() })
                .collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn prior_belief_scores_the_class_one_fraction() {
        let pool = Arc::new(crate::types::Pool::new(vec![SparseVector::new([(0, 1.0)]).unwrap()], LabelAlphabet::BINARY));
        let belief = MapBelief::new(pool, MapConfig::isotropic(1.0).unwrap()).unwrap();
        let test = test_set(&[1, 2, 2, 1, 1]);
        assert_eq!(accuracy(&belief, &test).unwrap(), 0.6);
        assert_eq!(accuracy(&belief, &test).unwrap(), accuracy(&belief, &test).unwrap());
        assert!(accuracy(&belief, &TestSet { examples: vec![], labels: vec![] }).is_err());
    }

    #[test]
    fn perfect_model_scores_one() {
        let checkpoint = LinearModel { weights: vec![5.0], bias: 0.0, sigma2: 1.0 };
        let config = MapConfig {
            label_prior: crate::map::GaussianPrior::centered_at(checkpoint),
            abstention_prior: crate::map::GaussianPrior::isotropic(1.0).unwrap(),
            fit: Default::default(),
        };
        let pool = Arc::new(crate::types::Pool::new(vec![SparseVector::new([(0, 1.0)]).unwrap()], LabelAlphabet::BINARY));
        let belief = MapBelief::new(pool, config).unwrap();
        assert_eq!(accuracy(&belief, &test_set(&[2, 2, 2])).unwrap(), 1.0);
    }

    #[test]
    fn exact_belief_predicts_mixture() {
        let b = DiscreteBelief::new(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![0.9, 0.1],
            vec![vec![0.5]],
            vec![1.0],
        )
        .unwrap();
        let p = Belief::predict(&b, &Example { id: 0, features: SparseVector::empty() }).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn aggregation_ignores_seed_order() {
        let a = aggregate(&[(1, 70.0), (2, 80.5), (3, 91.25)]).unwrap();
        let b = aggregate(&[(3, 91.25), (1, 70.0), (2, 80.5)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(aggregate(&[(0, 5.0)]).unwrap(), (5.0, 0.0));
        assert!(aggregate(&[]).is_none());
    }

    fn small_experiment(strategies: Vec<StrategyKind>, seeds: Vec<u64>) -> Experiment {
        Experiment {
            datasets: vec![synthetic_dataset(
                "synth",
                SynthSpec { n: 120, n_redundant: 60, dims: 20, separation: 0.5, redundant_classes: 2, doc_length: 8, seed: 1 },
            )],
            scenarios: vec![
                ScenarioGrid { kind: ScenarioKind::Unrelated, pcts: vec![0.0, 0.5] },
                ScenarioGrid { kind: ScenarioKind::Easy, pcts: vec![0.3] },
            ],
            strategies,
            seeds,
            settings: ExperimentSettings { budget: 8, pool_size: 40, test_size: 30, ..Default::default() },
        }
    }

    #[test]
    fn grid_has_every_cell_and_is_deterministic() {
        let exp = small_experiment(StrategyKind::ALL.to_vec(), vec![0, 1]);
        let a = run_experiment(&exp, Some(4)).unwrap();
        assert_eq!(a.cells.len(), 3 * 6 * 2);
        assert!(a.all_succeeded(), "{:?}", a.failures().collect::<Vec<_>>());
        assert_eq!(a.summary().len(), 3 * 6);
        let b = run_experiment(&exp, Some(1)).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let header = String::from_utf8(ca).unwrap();
        assert!(header.starts_with("dataset,scenario,pct,strategy,seed,auac\n"));
        for cell in &a.cells {
            let run = cell.result.as_ref().unwrap();
            assert_eq!(run.curve.len(), 8);
            assert!(run.curve.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut exp = small_experiment(vec![StrategyKind::Passive], vec![0]);
        exp.scenarios = vec![ScenarioGrid { kind: ScenarioKind::Unrelated, pcts: vec![0.5, 1.0] }];
        exp.settings.pool_size = 100;
        let report = run_experiment(&exp, None).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells[0].result.is_ok());
        assert!(report.cells[1].result.is_err());
        assert_eq!(report.summary()[1].failed, 1);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().ends_with(",1,PL,0,\n"));
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(run_experiment(&small_experiment(vec![], vec![0]), None).is_err());
        assert!(run_experiment(&small_experiment(vec![StrategyKind::Passive], vec![]), None).is_err());
    }
}
