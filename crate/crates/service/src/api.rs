//! Wire types of the session API.

use balaf_core::map::LinearModel;
use balaf_core::strategy::StrategyKind;
use balaf_core::types::ScoreEntry;
use balaf_core::{ExampleId, SparseVector};
use serde::{Deserialize, Serialize};

fn default_sigma2() -> f64 {
    1.0
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// Bundle name; may be omitted when exactly one bundle is loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<String>,
    pub strategy: StrategyKind,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Prior variance for both models when no checkpoint is given.
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    /// Checkpoint used as the center of the label model prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_prior: Option<LinearModel>,
    /// Checkpoint used as the center of the abstention model prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstention_prior: Option<LinearModel>,
}

/// Body of `POST /sessions/{id}/respond`. Exactly one of `label` and
/// `abstain: true`; `x` and `step` optionally pin the query being answered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RespondRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstain: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<ExampleId>,
    /// 1-based index of the step being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingResponse,
    Completed,
    Suspended,
}

/// The outstanding query as shown to a labeler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    /// 1-based step this query belongs to.
    pub step: usize,
    pub x: ExampleId,
    pub features: SparseVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Posterior mean abstention rate of the queried example.
    pub abstention: f64,
    pub label_dist: Vec<f64>,
    /// Strategy score of the queried example; absent for passive selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Scores of every candidate at selection time.
    #[serde(default)]
    pub scores: Vec<ScoreEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub x: ExampleId,
    /// Label, or 0 for abstain.
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointLinks {
    pub h: String,
    pub r: String,
}

/// Reply to create and respond calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReply {
    pub id: String,
    pub status: SessionStatus,
    pub step: usize,
    pub budget: usize,
    pub remaining: usize,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryView>,
    /// Present once the session is complete.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<CompletionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSummary {
    pub labels: usize,
    pub abstentions: usize,
    pub trace: String,
    pub checkpoints: CheckpointLinks,
}

/// Per-candidate diagnostics for the unqueried pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub x: ExampleId,
    pub abstention: f64,
    pub label_dist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Reply to `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: SessionStatus,
    pub config: SessionConfig,
    pub bundle: String,
    pub step: usize,
    pub budget: usize,
    pub remaining: usize,
    pub truncated: bool,
    pub alphabet: u32,
    pub trace: Vec<TraceEntry>,
    pub label_observations: usize,
    pub abstention_observations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryView>,
    pub candidates: Vec<CandidateView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<CheckpointLinks>,
    /// Why the session cannot continue, when suspended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReply {
    pub id: String,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: ExampleId,
    pub label: u32,
    pub label_dist: Vec<f64>,
    pub abstention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsReply {
    pub id: String,
    pub step: usize,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub name: String,
    pub size: usize,
    pub dim: usize,
    pub alphabet: u32,
    /// Whether the bundle carries an abstention sidecar, which the oracle
    /// strategies need.
    pub has_abstention: bool,
}
