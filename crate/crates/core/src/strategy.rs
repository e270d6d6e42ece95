//! Query-selection criteria.
//!
//! Every criterion is a pure function of the predictive label distribution
//! `p[Y = y; x]` and the posterior mean abstention rate `r̃(x)`. Selection
//! picks the extremal score over the unqueried pool; ties go to the lowest
//! example id.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ExampleId, LabelAlphabet, ScoreEntry};

/// Scores closer than this to the extremum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// What a query strategy needs to see of a belief.
pub trait BeliefView {
    fn alphabet(&self) -> LabelAlphabet;

    /// Predictive distribution over labels `1..=ℓ`, indexed from 0.
    fn label_dist(&self, x: ExampleId) -> Vec<f64>;

    /// Posterior mean abstention rate `r̃(x)`.
    fn abstention(&self, x: ExampleId) -> f64;
}

impl<T: BeliefView + ?Sized> BeliefView for &T {
    fn alphabet(&self) -> LabelAlphabet {
        (**self).alphabet()
    }
    fn label_dist(&self, x: ExampleId) -> Vec<f64> {
        (**self).label_dist(x)
    }
    fn abstention(&self, x: ExampleId) -> f64 {
        (**self).abstention(x)
    }
}

fn sum_sq(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum()
}

fn max_prob(p: &[f64]) -> f64 {
    p.iter().copied().fold(0.0, f64::max)
}

/// Average-case criterion: `1 − r̃² − (1 − r̃)² Σ_y p_y²`. Larger is better.
pub fn score_avg(p: &[f64], r: f64) -> f64 {
    1.0 - r * r - (1.0 - r) * (1.0 - r) * sum_sq(p)
}

/// Worst-case criterion: `max{r̃, (1 − r̃) max_y p_y}`. Smaller is better.
pub fn score_worst(p: &[f64], r: f64) -> f64 {
    r.max((1.0 - r) * max_prob(p))
}

/// Maximum Gibbs error: `1 − Σ_y p_y²`. Larger is better.
pub fn score_gibbs(p: &[f64]) -> f64 {
    1.0 - sum_sq(p)
}

/// Least confidence: `max_y p_y`. Smaller is better.
pub fn score_least_confidence(p: &[f64]) -> f64 {
    max_prob(p)
}

/// The abstention rate maximizing [`score_avg`] for a fixed label distribution.
pub fn avg_optimal_rate(p: &[f64]) -> f64 {
    let s = sum_sq(p);
    s / (1.0 + s)
}

/// The abstention rate minimizing [`score_worst`] for a fixed label distribution.
pub fn worst_optimal_rate(p: &[f64]) -> f64 {
    let m = max_prob(p);
    m / (1.0 + m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Passive learning: uniform random choice.
    #[serde(rename = "PL")]
    Passive,
    /// Maximum Gibbs error, ignoring abstention.
    #[serde(rename = "ALg")]
    Gibbs,
    /// Average-case criterion with the learned abstention estimate.
    #[serde(rename = "ALa")]
    Average,
    /// Worst-case criterion with the learned abstention estimate.
    #[serde(rename = "ALw")]
    Worst,
    /// Average-case criterion with a fixed, externally trained abstention estimate.
    #[serde(rename = "ALa_oracle")]
    AverageOracle,
    /// Worst-case criterion with a fixed, externally trained abstention estimate.
    #[serde(rename = "ALw_oracle")]
    WorstOracle,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Passive,
        StrategyKind::Gibbs,
        StrategyKind::Average,
        StrategyKind::Worst,
        StrategyKind::AverageOracle,
        StrategyKind::WorstOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Passive => "PL",
            StrategyKind::Gibbs => "ALg",
            StrategyKind::Average => "ALa",
            StrategyKind::Worst => "ALw",
            StrategyKind::AverageOracle => "ALa_oracle",
            StrategyKind::WorstOracle => "ALw_oracle",
        }
    }

    pub fn needs_oracle(self) -> bool {
        matches!(self, StrategyKind::AverageOracle | StrategyKind::WorstOracle)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::input(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Max,
    Min,
}

/// Lowest id whose score is within [`TIE_TOLERANCE`] of the extremum.
fn extremal(scores: &[ScoreEntry], direction: Direction) -> Option<ExampleId> {
    let best = match direction {
        Direction::Max => scores.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max),
        Direction::Min => scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min),
    };
    scores
        .iter()
        .filter(|s| match direction {
            Direction::Max => s.score >= best - TIE_TOLERANCE,
            Direction::Min => s.score <= best + TIE_TOLERANCE,
        })
        .map(|s| s.x)
        .min()
}

/// Index of the largest value, ties to the lowest index, with the same
/// tolerance as query selection.
pub fn argmax_with_ties(values: &[f64]) -> Option<usize> {
    let entries: Vec<ScoreEntry> =
        values.iter().enumerate().map(|(x, &score)| ScoreEntry { x, score }).collect();
    extremal(&entries, Direction::Max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub x: ExampleId,
    /// Per-candidate scores; empty for passive selection.
    pub scores: Vec<ScoreEntry>,
}

/// A strategy plus, for the oracle variants, its fixed abstention estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    kind: StrategyKind,
    fixed_rates: Option<Vec<f64>>,
}

impl Selector {
    pub fn new(kind: StrategyKind) -> Result<Self> {
        if kind.needs_oracle() {
            return Err(Error::input(format!("{kind} requires a fixed abstention estimate")));
        }
        Ok(Selector { kind, fixed_rates: None })
    }

    /// Oracle variant: `rates[x]` replaces the learned `r̃(x)` for the whole
    /// session.
    pub fn with_fixed_rates(kind: StrategyKind, rates: Vec<f64>) -> Result<Self> {
        if !kind.needs_oracle() {
            return Err(Error::input(format!("{kind} does not take a fixed abstention estimate")));
        }
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::input("fixed abstention rates must lie in [0, 1]"));
        }
        Ok(Selector { kind, fixed_rates: Some(rates) })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn fixed_rates(&self) -> Option<&[f64]> {
        self.fixed_rates.as_deref()
    }

    fn rate<V: BeliefView>(&self, view: &V, x: ExampleId) -> f64 {
        match &self.fixed_rates {
            Some(rates) => rates[x],
            None => view.abstention(x),
        }
    }

    /// Score of a single candidate, or `None` for passive selection.
    pub fn score<V: BeliefView>(&self, view: &V, x: ExampleId) -> Option<f64> {
        let p = view.label_dist(x);
        match self.kind {
            StrategyKind::Passive => None,
            StrategyKind::Gibbs => Some(score_gibbs(&p)),
            StrategyKind::Average | StrategyKind::AverageOracle => {
                Some(score_avg(&p, self.rate(view, x)))
            }
            StrategyKind::Worst | StrategyKind::WorstOracle => {
                Some(score_worst(&p, self.rate(view, x)))
            }
        }
    }

    /// Picks the next query among `unqueried`.
    pub fn select<V: BeliefView, R: Rng + ?Sized>(
        &self,
        view: &V,
        unqueried: &[ExampleId],
        rng: &mut R,
    ) -> Result<Selection> {
        if unqueried.is_empty() {
            return Err(Error::Exhausted);
        }
        if let Some(rates) = &self.fixed_rates {
            if let Some(&x) = unqueried.iter().find(|&&x| x >= rates.len()) {
                return Err(Error::UnknownExample(x));
            }
        }
        let direction = match self.kind {
            StrategyKind::Passive => {
                let x = unqueried[rng.gen_range(0..unqueried.len())];
                return Ok(Selection { x, scores: Vec::new() });
            }
            StrategyKind::Worst | StrategyKind::WorstOracle => Direction::Min,
            _ => Direction::Max,
        };
        let scores: Vec<ScoreEntry> = unqueried
            .iter()
            .map(|&x| ScoreEntry { x, score: self.score(view, x).expect("active strategy") })
            .collect();
        let x = extremal(&scores, direction).ok_or(Error::Exhausted)?;
        Ok(Selection { x, scores })
    }
}
