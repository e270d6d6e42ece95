//! Bayesian active learning with abstention feedback.
//!
//! A labeler may refuse to label a queried example. Abstentions consume the
//! query budget, so the learner tracks two posteriors side by side: one over
//! label hypotheses and one over abstention-rate hypotheses. Query strategies
//! fold the posterior mean abstention rate into the classic maximum Gibbs
//! error and least-confidence criteria.
//!
//! Two belief representations are provided:
//!
//! - [`exact::DiscreteBelief`]: finite hypothesis sets with exact Bayes
//!   updates, plus brute-force machinery (induced joint prior, version space
//!   utility, optimal policy search) used to check the greedy guarantees on
//!   small instances.
//! - [`map::MapBelief`]: logistic-regression label and abstention models fit
//!   by MAP estimation, used at dataset scale.

pub mod engine;
pub mod error;
pub mod eval;
pub mod exact;
pub mod ingest;
pub mod map;
pub mod scenario;
pub mod strategy;
pub mod types;
pub mod verify;

mod optim;

pub use error::{Error, Result};
pub use types::{
    AbstentionPattern, Example, ExampleId, LabelAlphabet, Labeling, Pool, Response, SessionTrace,
    SparseVector, TraceStep,
};
