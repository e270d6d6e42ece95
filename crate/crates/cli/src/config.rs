//! Experiment configuration file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use balaf_core::eval::{DataSource, Experiment, ExperimentDataset, ExperimentSettings, ScenarioGrid};
use balaf_core::ingest::{parse_svmlight, Dataset, SynthSpec};
use balaf_core::strategy::StrategyKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One dataset entry: either a synthetic spec or svmlight files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    /// Binary target dataset. Relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Rows from unrelated classes, used by the unrelated scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redundant: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<DatasetConfig>,
    pub scenarios: Vec<ScenarioGrid>,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner_sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    pub fn settings(&self) -> ExperimentSettings {
        let d = ExperimentSettings::default();
        ExperimentSettings {
            budget: self.budget.unwrap_or(d.budget),
            pool_size: self.pool_size.unwrap_or(d.pool_size),
            test_size: self.test_size.unwrap_or(d.test_size),
            learner_sigma2: self.learner_sigma2.unwrap_or(d.learner_sigma2),
            generator_sigma2: self.generator_sigma2.unwrap_or(d.generator_sigma2),
        }
    }

    /// Checks everything that can be checked without running a cell, and
    /// loads dataset files. `base` is the directory relative paths resolve
    /// against.
    pub fn to_experiment(&self, base: &Path) -> Result<Experiment, CliError> {
        let settings = self.settings();
        settings.validate().map_err(|e| config_error(e.to_string()))?;
        if self.datasets.is_empty() {
            return Err(config_error("no datasets"));
        }
        if self.scenarios.iter().all(|s| s.pcts.is_empty()) {
            return Err(config_error("no scenario percentages"));
        }
        if self.strategies.is_empty() {
            return Err(config_error("no strategies"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("no seeds"));
        }
        if self.jobs == Some(0) {
            return Err(config_error("jobs must be at least 1"));
        }
        for grid in &self.scenarios {
            if let Some(p) = grid.pcts.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(config_error(format!("{} percentage {p} outside [0, 1]", grid.kind)));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        let mut datasets = Vec::new();
        for d in &self.datasets {
            if d.name.is_empty() || !d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(config_error(format!("dataset name '{}' must be non-empty [A-Za-z0-9_-]", d.name)));
            }
            if !names.insert(d.name.clone()) {
                return Err(config_error(format!("duplicate dataset name '{}'", d.name)));
            }
            let source = match (&d.synth, &d.path) {
                (Some(spec), None) => {
                    if d.redundant.is_some() {
                        return Err(config_error(format!("dataset '{}': redundant file given with synth", d.name)));
                    }
                    DataSource::Synth(*spec)
                }
                (None, Some(path)) => DataSource::Fixed {
                    target: Arc::new(read_dataset(&base.join(path))?),
                    redundant: d.redundant.as_ref().map(|p| read_dataset(&base.join(p)).map(Arc::new)).transpose()?,
                },
                _ => return Err(config_error(format!("dataset '{}' needs exactly one of synth and path", d.name))),
            };
            datasets.push(ExperimentDataset { name: d.name.clone(), source });
        }
        Ok(Experiment {
            datasets,
            scenarios: self.scenarios.clone(),
            strategies: self.strategies.clone(),
            seeds: self.seeds.clone(),
            settings,
        })
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    parse_svmlight(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}
