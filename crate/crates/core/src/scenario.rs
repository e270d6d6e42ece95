//! Abstention scenarios: which examples a simulated labeler refuses, and
//! the fixed abstention estimate used by the oracle strategy variants.
//!
//! - Unrelated: the pool mixes in examples from classes outside the task,
//!   and the labeler abstains on exactly those.
//! - Easy / Hard: a generator model is fit once on the whole pool; the
//!   labeler abstains on the examples it is most / least confident about.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, Dataset};
use crate::map::{fit_map, FitOptions, GaussianPrior, LinearModel, Observations};
use crate::types::{AbstentionPattern, ExampleId, LabelAlphabet, Pool, Response};

/// Prior variance of the model that decides Easy and Hard abstentions.
pub const GENERATOR_SIGMA2: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Unrelated,
    Easy,
    Hard,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Unrelated => "unrelated",
            ScenarioKind::Easy => "easy",
            ScenarioKind::Hard => "hard",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unrelated" => Ok(ScenarioKind::Unrelated),
            "easy" => Ok(ScenarioKind::Easy),
            "hard" => Ok(ScenarioKind::Hard),
            other => Err(Error::Input(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub pct: f64,
    #[serde(default = "default_generator_sigma2")]
    pub generator_sigma2: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_generator_sigma2() -> f64 {
    GENERATOR_SIGMA2
}

fn check_pct(pct: f64) -> Result<()> {
    if (0.0..=1.0).contains(&pct) {
        Ok(())
    } else {
        Err(Error::Input(format!("abstention percentage {pct} outside [0, 1]")))
    }
}

/// The labeler's true responses over a pool. Labels of examples the
/// labeler always abstains on may be hidden; reading one is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    labels: Vec<Option<u32>>,
    abstain: AbstentionPattern,
    alphabet: LabelAlphabet,
}

impl Truth {
    pub fn new(labels: Vec<Option<u32>>, abstain: AbstentionPattern, alphabet: LabelAlphabet) -> Result<Self> {
        if labels.len() != abstain.len() {
            return Err(Error::Input("labels and abstention pattern differ in length".into()));
        }
        for (x, label) in labels.iter().enumerate() {
            match label {
                Some(y) => {
                    alphabet.check(*y)?;
                }
                None if !abstain.as_slice()[x] => {
                    return Err(Error::Input(format!("example {x} has no label but is not abstained")))
                }
                None => {}
            }
        }
        Ok(Truth { labels, abstain, alphabet })
    }

    pub fn fully_labeled(labels: &[u32], abstain: AbstentionPattern, alphabet: LabelAlphabet) -> Result<Self> {
        Truth::new(labels.iter().map(|&y| Some(y)).collect(), abstain, alphabet)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn alphabet(&self) -> LabelAlphabet {
        self.alphabet
    }

    pub fn abstention_pattern(&self) -> &AbstentionPattern {
        &self.abstain
    }

    pub fn is_hidden(&self, x: ExampleId) -> bool {
        self.labels.get(x).is_some_and(Option::is_none)
    }

    pub fn label(&self, x: ExampleId) -> Result<u32> {
        match self.labels.get(x) {
            Some(Some(y)) => Ok(*y),
            Some(None) => Err(Error::Input(format!("label of example {x} is hidden"))),
            None => Err(Error::UnknownExample(x)),
        }
    }

    pub fn response(&self, x: ExampleId) -> Result<Response> {
        if self.abstain.get(x)? {
            Ok(Response::Abstain)
        } else {
            Ok(Response::Label(self.label(x)?))
        }
    }
}

/// A pool with the labeler's behavior on it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub pool: Arc<Pool>,
    pub truth: Truth,
}

/// Mixes `round(pct · pool_size)` rows of `redundant` into a pool filled
/// with rows of `target`; the labeler abstains on exactly the redundant
/// rows. Rows are sampled and the pool order shuffled with `seed`.
pub fn gen_unrelated(
    target: &Dataset,
    redundant: &Dataset,
    pct: f64,
    pool_size: usize,
    seed: u64,
) -> Result<Scenario> {
    check_pct(pct)?;
    let n_redundant = (pct * pool_size as f64).round() as usize;
    let n_target = pool_size - n_redundant;
    if n_redundant > redundant.len() {
        return Err(Error::Input(format!("need {n_redundant} unrelated rows, have {}", redundant.len())));
    }
    if n_target > target.len() {
        return Err(Error::Input(format!("need {n_target} target rows, have {}", target.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t_rows: Vec<usize> = (0..target.len()).collect();
    t_rows.shuffle(&mut rng);
    let mut r_rows: Vec<usize> = (0..redundant.len()).collect();
    r_rows.shuffle(&mut rng);
    let mut entries: Vec<(bool, usize)> = t_rows[..n_target]
        .iter()
        .map(|&i| (false, i))
        .chain(r_rows[..n_redundant].iter().map(|&i| (true, i)))
        .collect();
    entries.shuffle(&mut rng);

    let dim = target.dim.max(redundant.dim);
    let mut features = Vec::with_capacity(pool_size);
    let mut labels = Vec::with_capacity(pool_size);
    let mut bits = Vec::with_capacity(pool_size);
    for (is_redundant, i) in entries {
        if is_redundant {
            features.push(redundant.features[i].clone());
            labels.push(None);
        } else {
            features.push(target.features[i].clone());
            labels.push(Some(target.labels[i]));
        }
        bits.push(is_redundant);
    }
    let pool = Pool::with_dim(features, LabelAlphabet::BINARY, dim);
    let truth = Truth::new(labels, AbstentionPattern::new(bits), LabelAlphabet::BINARY)?;
    Ok(Scenario { pool: Arc::new(pool), truth })
}

/// Abstention pattern of the Easy or Hard scenario with its generator
/// confidences `d(x) = |p(x) − 1/2|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidencePattern {
    pub pattern: AbstentionPattern,
    pub distances: Vec<f64>,
    pub model: LinearModel,
}

/// Number of abstained examples under Easy and Hard.
pub fn easy_hard_count(pct: f64, n: usize) -> usize {
    ((pct * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Fits the generator model on all of `data` and abstains on the
/// `⌈pct · n⌉` examples with the largest (Easy) or smallest (Hard) distance
/// from 1/2. Ties go to the lower id.
pub fn gen_easy_hard(data: &Dataset, kind: ScenarioKind, pct: f64, sigma2: f64) -> Result<ConfidencePattern> {
    check_pct(pct)?;
    let pool = data.pool();
    let obs = Observations::from_entries(data.labels.iter().enumerate().map(|(x, &y)| (x, y == 2)).collect())?;
    let model = fit_map(&obs, &pool, &GaussianPrior::isotropic(sigma2)?, &FitOptions::default())?;
    let distances: Vec<f64> = pool.examples().iter().map(|e| (model.prob(&e.features) - 0.5).abs()).collect();
    let mut order: Vec<ExampleId> = pool.ids().collect();
    match kind {
        ScenarioKind::Easy => order.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]).then(a.cmp(&b))),
        ScenarioKind::Hard => order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b))),
        ScenarioKind::Unrelated => {
            return Err(Error::Input("the unrelated scenario is not confidence based".into()))
        }
    }
    let mut bits = vec![false; pool.len()];
    for &x in &order[..easy_hard_count(pct, pool.len())] {
        bits[x] = true;
    }
    Ok(ConfidencePattern { pattern: AbstentionPattern::new(bits), distances, model })
}

/// A fixed logistic abstention model fit on the true pattern over the whole
/// pool.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimate {
    pub model: LinearModel,
    /// The pattern was all abstain or all answer, so the fit has nothing to
    /// separate and only the bias moves.
    pub degenerate: bool,
}

impl OracleEstimate {
    /// `r*(x)` for every pool example.
    pub fn rates(&self, pool: &Pool) -> Vec<f64> {
        pool.examples().iter().map(|e| self.model.prob(&e.features)).collect()
    }
}

pub fn fit_oracle_estimator(pool: &Pool, pattern: &AbstentionPattern, sigma2: f64) -> Result<OracleEstimate> {
    if pattern.len() != pool.len() {
        return Err(Error::Input("abstention pattern does not cover the pool".into()));
    }
    let obs = Observations::from_entries(pattern.as_slice().iter().copied().enumerate().collect())?;
    let model = fit_map(&obs, pool, &GaussianPrior::isotropic(sigma2)?, &FitOptions::default())?;
    let count = pattern.count();
    let degenerate = count == 0 || count == pattern.len();
    if degenerate {
        log::warn!("abstention pattern is constant; oracle estimate only shifts its bias");
    }
    Ok(OracleEstimate { model, degenerate })
}

/// On-disk scenario: `pool.svmlight`, `pool.abst`, and `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    /// Examples whose labels are never shown (unrelated rows).
    #[serde(default)]
    pub hidden: Vec<ExampleId>,
    /// Optional readable text per example, by id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub display_text: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub data: Dataset,
    pub abstain: Option<AbstentionPattern>,
}

impl Bundle {
    pub fn from_scenario(name: &str, spec: Option<ScenarioSpec>, scenario: &Scenario) -> Bundle {
        let labels = (0..scenario.truth.len())
            .map(|x| scenario.truth.label(x).unwrap_or(1))
            .collect();
        let hidden = (0..scenario.truth.len()).filter(|&x| scenario.truth.is_hidden(x)).collect();
        Bundle {
            manifest: BundleManifest { name: name.into(), scenario: spec, hidden, display_text: Vec::new() },
            data: Dataset {
                features: scenario.pool.examples().iter().map(|e| e.features.clone()).collect(),
                labels,
                dim: scenario.pool.dim(),
                source_class: None,
            },
            abstain: Some(scenario.truth.abstention_pattern().clone()),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("pool.svmlight"), ingest::render_svmlight(&self.data))?;
        if let Some(abstain) = &self.abstain {
            fs::write(dir.join("pool.abst"), ingest::render_abstention_sidecar(abstain.as_slice()))?;
        }
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Bundle> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
        };
        let manifest: BundleManifest = serde_json::from_str(&read("manifest.json")?)?;
        let data = ingest::parse_svmlight(&read("pool.svmlight")?)?;
        let abstain = if dir.join("pool.abst").exists() {
            let bits = ingest::parse_abstention_sidecar(&read("pool.abst")?)?;
            if bits.len() != data.len() {
                return Err(Error::Input(format!(
                    "abstention sidecar has {} lines, dataset has {} rows",
                    bits.len(),
                    data.len()
                )));
            }
            Some(AbstentionPattern::new(bits))
        } else {
            None
        };
        if let Some(&x) = manifest.hidden.iter().find(|&&x| x >= data.len()) {
            return Err(Error::UnknownExample(x));
        }
        if !manifest.display_text.is_empty() && manifest.display_text.len() != data.len() {
            return Err(Error::Input("display_text must have one entry per example".into()));
        }
        Ok(Bundle { manifest, data, abstain })
    }

    pub fn pool(&self) -> Pool {
        self.data.pool()
    }

    /// The labeler's behavior recorded in the bundle; without a sidecar the
    /// labeler never abstains.
    pub fn truth(&self) -> Result<Truth> {
        let abstain = self.abstain.clone().unwrap_or_else(|| AbstentionPattern::none(self.data.len()));
        let labels = (0..self.data.len())
            .map(|x| (!self.manifest.hidden.contains(&x)).then_some(self.data.labels[x]))
            .collect();
        Truth::new(labels, abstain, LabelAlphabet::BINARY)
    }
}
