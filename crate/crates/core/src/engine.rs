//! The query loop: select, ask the labeler, update the belief on the branch
//! the response calls for, repeat until the budget is spent.
//!
//! Every response, abstentions included, consumes one unit of budget, and an
//! example is never queried twice.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::DiscreteBelief;
use crate::map::MapBelief;
use crate::scenario::Truth;
use crate::strategy::{BeliefView, Selection, Selector};
use crate::types::{Example, ExampleId, Response, SessionTrace, TraceStep};

/// A belief the loop can update and predict from.
pub trait Belief: BeliefView + Clone {
    fn pool_size(&self) -> usize;

    /// Applies one response in place. On error the belief is unchanged.
    fn observe(&mut self, x: ExampleId, resp: Response) -> Result<()>;

    /// Predictive label distribution for `x`.
    fn predict(&self, x: &Example) -> Result<Vec<f64>>;
}

impl Belief for DiscreteBelief {
    fn pool_size(&self) -> usize {
        DiscreteBelief::pool_size(self)
    }

    fn observe(&mut self, x: ExampleId, resp: Response) -> Result<()> {
        *self = self.update(x, resp)?;
        Ok(())
    }

    /// Exact mixture `Σ_h p[h] P[h(x) = y]`; hypotheses are indexed by pool
    /// position, so `x.id` must be a pool id.
    fn predict(&self, x: &Example) -> Result<Vec<f64>> {
        self.label_marginal(x.id)
    }
}

impl Belief for MapBelief {
    fn pool_size(&self) -> usize {
        self.pool().len()
    }

    fn observe(&mut self, x: ExampleId, resp: Response) -> Result<()> {
        MapBelief::observe(self, x, resp)
    }

    fn predict(&self, x: &Example) -> Result<Vec<f64>> {
        Ok(MapBelief::predict(self, x).to_vec())
    }
}

/// Source of responses.
pub trait Labeler {
    fn respond(&mut self, x: ExampleId) -> Result<Response>;
}

impl<F: FnMut(ExampleId) -> Result<Response>> Labeler for F {
    fn respond(&mut self, x: ExampleId) -> Result<Response> {
        self(x)
    }
}

/// Deterministic labeler backed by a true labeling and abstention pattern.
#[derive(Debug, Clone)]
pub struct TruthLabeler<'a>(pub &'a Truth);

impl Labeler for TruthLabeler<'_> {
    fn respond(&mut self, x: ExampleId) -> Result<Response> {
        self.0.response(x)
    }
}

/// Abstains on `x` with probability `rates[x]`, otherwise returns the true
/// label. Each draw depends only on `(seed, x)`.
#[derive(Debug, Clone)]
pub struct StochasticLabeler {
    pub labels: Vec<u32>,
    pub rates: Vec<f64>,
    pub seed: u64,
}

impl Labeler for StochasticLabeler {
    fn respond(&mut self, x: ExampleId) -> Result<Response> {
        use rand::Rng;
        let (&label, &rate) = self
            .labels
            .get(x)
            .zip(self.rates.get(x))
            .ok_or(Error::UnknownExample(x))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(x as u64);
        Ok(if rng.gen_bool(rate.clamp(0.0, 1.0)) { Response::Abstain } else { Response::Label(label) })
    }
}

/// Strategy, budget and seed of a session; everything needed to replay it
/// from its initial belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionParams {
    pub budget: usize,
    pub seed: u64,
    /// Keep per-candidate scores in the trace.
    #[serde(default)]
    pub record_scores: bool,
}

/// One run of the query loop over a belief.
#[derive(Debug, Clone)]
pub struct Session<B: Belief> {
    belief: B,
    selector: Selector,
    params: SessionParams,
    queried: Vec<bool>,
    trace: SessionTrace,
    outstanding: Option<Selection>,
}

impl<B: Belief> Session<B> {
    pub fn new(belief: B, selector: Selector, params: SessionParams) -> Result<Self> {
        if params.budget == 0 {
            return Err(Error::input("budget must be at least 1"));
        }
        if let Some(rates) = selector.fixed_rates() {
            if rates.len() != belief.pool_size() {
                return Err(Error::input(format!(
                    "fixed abstention estimate covers {} examples, pool has {}",
                    rates.len(),
                    belief.pool_size()
                )));
            }
        }
        let n = belief.pool_size();
        Ok(Session {
            belief,
            selector,
            params,
            queried: vec![false; n],
            trace: SessionTrace::new(params.budget, params.seed),
            outstanding: None,
        })
    }

    /// Rebuilds a session by replaying recorded steps. Each recorded query
    /// must be the one the strategy selects at that point.
    pub fn replay(belief: B, selector: Selector, params: SessionParams, steps: &[TraceStep]) -> Result<Self> {
        let mut session = Session::new(belief, selector, params)?;
        for (i, step) in steps.iter().enumerate() {
            let expected = session.next_query()?.map(|s| s.x);
            if expected != Some(step.x) {
                return Err(Error::Protocol(format!(
                    "replay diverged at step {}: recorded {}, selected {:?}",
                    i + 1,
                    step.x,
                    expected
                )));
            }
            session.step(step.x, step.response)?;
        }
        Ok(session)
    }

    pub fn belief(&self) -> &B {
        &self.belief
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    pub fn params(&self) -> SessionParams {
        self.params
    }

    pub fn trace(&self) -> &SessionTrace {
        &self.trace
    }

    pub fn into_parts(self) -> (SessionTrace, B) {
        (self.trace, self.belief)
    }

    pub fn steps_taken(&self) -> usize {
        self.trace.steps.len()
    }

    pub fn remaining(&self) -> usize {
        self.params.budget - self.steps_taken()
    }

    pub fn is_queried(&self, x: ExampleId) -> bool {
        self.queried.get(x).copied().unwrap_or(false)
    }

    pub fn unqueried(&self) -> Vec<ExampleId> {
        (0..self.queried.len()).filter(|&x| !self.queried[x]).collect()
    }

    pub fn outstanding(&self) -> Option<&Selection> {
        self.outstanding.as_ref()
    }

    /// True once the budget is spent or the pool is exhausted.
    pub fn is_complete(&self) -> bool {
        self.outstanding.is_none() && (self.remaining() == 0 || self.queried.iter().all(|&q| q))
    }

    /// The outstanding query, selecting one if needed. `None` when the
    /// session is complete; running out of pool sets the truncation flag.
    pub fn next_query(&mut self) -> Result<Option<&Selection>> {
        if self.outstanding.is_none() {
            if self.remaining() == 0 {
                return Ok(None);
            }
            let unqueried = self.unqueried();
            if unqueried.is_empty() {
                self.trace.truncated = true;
                return Ok(None);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
            rng.set_stream(self.steps_taken() as u64);
            self.outstanding = Some(self.selector.select(&self.belief, &unqueried, &mut rng)?);
        }
        Ok(self.outstanding.as_ref())
    }

    /// Applies the response to the outstanding query on `x`.
    pub fn step(&mut self, x: ExampleId, resp: Response) -> Result<()> {
        let outstanding = match &self.outstanding {
            Some(sel) if sel.x == x => sel,
            Some(sel) => {
                return Err(Error::Protocol(format!("response for {x}, but {} is outstanding", sel.x)))
            }
            None => return Err(Error::Protocol(format!("response for {x}, but no query is outstanding"))),
        };
        if let Response::Label(y) = resp {
            self.belief.alphabet().check(y)?;
        }
        self.belief.observe(x, resp)?;
        let scores = if self.params.record_scores { outstanding.scores.clone() } else { Vec::new() };
        self.trace.steps.push(TraceStep { x, response: resp, scores });
        self.queried[x] = true;
        self.outstanding = None;
        debug_assert_eq!(self.steps_taken() + self.remaining(), self.params.budget);
        Ok(())
    }

    /// Runs to completion, calling `after_step` with the belief after each
    /// response.
    pub fn run_with<L: Labeler>(
        &mut self,
        labeler: &mut L,
        mut after_step: impl FnMut(&B, &TraceStep),
    ) -> Result<()> {
        while let Some(sel) = self.next_query()? {
            let x = sel.x;
            let resp = labeler.respond(x)?;
            self.step(x, resp)?;
            after_step(&self.belief, self.trace.steps.last().expect("just pushed"));
        }
        Ok(())
    }
}

/// Runs a full session and returns its trace and final belief.
pub fn run_session<B: Belief, L: Labeler>(
    belief: B,
    selector: Selector,
    labeler: &mut L,
    params: SessionParams,
) -> Result<(SessionTrace, B)> {
    let mut session = Session::new(belief, selector, params)?;
    session.run_with(labeler, |_, _| {})?;
    Ok(session.into_parts())
}
