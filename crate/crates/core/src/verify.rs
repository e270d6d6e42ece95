//! Randomized checks of the greedy guarantees on small exact instances.
//!
//! Each instance is a random [`DiscreteBelief`] plus a budget. The checks:
//!
//! - the average and worst-case criteria pick the same example as a
//!   brute-force argmax of the one-step version space gain;
//! - the induced joint prior's marginals agree with the belief's
//!   closed forms, and pairwise joint masses factorize;
//! - the greedy policy's value is within `1 − 1/e` of the optimal policy's,
//!   for both objectives;
//! - extending a policy by one more query never lowers its value.
//!
//! Failing instances serialize to JSON fixtures that replay exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{
    brute_force_greedy_choice, check_search_size, greedy_policy, DiscreteBelief, JointPrior, Objective, MAX_LABELINGS,
};
use crate::strategy::{Selector, StrategyKind};
use crate::types::{ExampleId, Response};

/// Tolerance of the identity checks.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Slack allowed on value comparisons between policies.
pub const VALUE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub instances: usize,
    pub max_pool: usize,
    pub max_budget: usize,
    pub max_alphabet: usize,
    pub max_hypotheses: usize,
    pub max_abstention_hypotheses: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            instances: 200,
            max_pool: 4,
            max_budget: 3,
            max_alphabet: 3,
            max_hypotheses: 5,
            max_abstention_hypotheses: 4,
            seed: 0,
        }
    }
}

impl VerifyConfig {
    /// Rejects bounds whose largest instance would exceed the enumeration
    /// guards, before any instance is generated.
    pub fn check_capacity(&self) -> Result<()> {
        if self.max_pool == 0 || self.max_budget == 0 || self.max_hypotheses == 0 || self.max_abstention_hypotheses == 0
        {
            return Err(Error::Input("verify bounds must be positive".into()));
        }
        if self.max_alphabet < 2 {
            return Err(Error::Input("alphabet bound must be at least 2".into()));
        }
        let labelings = (self.max_alphabet as u64).checked_pow(self.max_pool as u32);
        if labelings.is_none_or(|n| n > MAX_LABELINGS) {
            return Err(Error::Capacity(format!(
                "{}^{} labelings exceed the limit of {MAX_LABELINGS}",
                self.max_alphabet, self.max_pool
            )));
        }
        let alphabet = crate::types::LabelAlphabet::new(self.max_alphabet as u32)?;
        check_search_size(self.max_pool, alphabet, self.max_budget.min(self.max_pool))
    }
}

/// One random instance, self-contained for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub index: usize,
    pub belief: DiscreteBelief,
    pub budget: usize,
}

/// Probability-like value, sometimes exactly 0 or 1.
fn rate(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.0..1.0),
    }
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn distribution(rng: &mut ChaCha8Rng, ell: usize) -> Vec<f64> {
    if rng.gen_bool(0.25) {
        let mut d = vec![0.0; ell];
        d[rng.gen_range(0..ell)] = 1.0;
        return d;
    }
    weights(rng, ell)
}

/// The `index`-th instance of a run; independent of every other index.
pub fn random_instance(config: &VerifyConfig, index: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let n = rng.gen_range(1..=config.max_pool);
    let ell = rng.gen_range(2..=config.max_alphabet);
    let nh = rng.gen_range(1..=config.max_hypotheses);
    let nr = rng.gen_range(1..=config.max_abstention_hypotheses);
    let hypotheses = (0..nh).map(|_| (0..n).map(|_| distribution(&mut rng, ell)).collect()).collect();
    let h_weights = weights(&mut rng, nh);
    let abstention = (0..nr).map(|_| (0..n).map(|_| rate(&mut rng)).collect()).collect();
    let r_weights = weights(&mut rng, nr);
    let belief = DiscreteBelief::new(hypotheses, h_weights, abstention, r_weights)?;
    let budget = rng.gen_range(1..=config.max_budget);
    Ok(Instance { index, belief, budget })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    GreedyEquivalenceAverage,
    GreedyEquivalenceWorst,
    AbstainMarginal,
    LabelMarginal,
    Factorization,
    BoundAverage,
    BoundWorst,
    Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub check: Check,
    pub detail: String,
}

/// Measured quantities of one instance, reported alongside pass/fail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub max_identity_error: f64,
    /// `(G_greedy, G_optimal)` per objective.
    pub avg_values: (f64, f64),
    pub worst_values: (f64, f64),
}

fn greedy_choice(belief: &DiscreteBelief, kind: StrategyKind) -> Result<ExampleId> {
    let ids: Vec<ExampleId> = (0..belief.pool_size()).collect();
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    Ok(Selector::new(kind)?.select(belief, &ids, &mut unused)?.x)
}

/// Pairwise joint mass straight from the belief's double sum over `h` and
/// `r`, independent of the induced prior's enumeration.
fn direct_pair_mass(b: &DiscreteBelief, obs: &[(ExampleId, Response)]) -> f64 {
    let label_part: f64 = b
        .hypotheses()
        .iter()
        .zip(b.h_weights())
        .map(|(h, w)| {
            w * obs
                .iter()
                .map(|&(x, r)| match r {
                    Response::Label(y) => h[x][(y - 1) as usize],
                    Response::Abstain => 1.0,
                })
                .product::<f64>()
        })
        .sum();
    let abstain_part: f64 = b
        .abstention_hypotheses()
        .iter()
        .zip(b.r_weights())
        .map(|(r, w)| {
            w * obs
                .iter()
                .map(|&(x, resp)| if resp.is_abstain() { r[x] } else { 1.0 - r[x] })
                .product::<f64>()
        })
        .sum();
    label_part * abstain_part
}

/// Runs every check on one instance.
pub fn check_instance(inst: &Instance) -> Result<(InstanceStats, Vec<Failure>)> {
    let b = &inst.belief;
    let prior = JointPrior::induce(b)?;
    let mut failures = Vec::new();
    let mut stats = InstanceStats::default();
    let mut fail = |check, detail: String| failures.push(Failure { check, detail });

    for (objective, kind, check) in [
        (Objective::Average, StrategyKind::Average, Check::GreedyEquivalenceAverage),
        (Objective::Worst, StrategyKind::Worst, Check::GreedyEquivalenceWorst),
    ] {
        let greedy = greedy_choice(b, kind)?;
        let brute = brute_force_greedy_choice(&prior, objective);
        if greedy != brute {
            fail(check, format!("criterion picks {greedy}, brute force picks {brute}; gains {:?}", prior.one_step_gains(objective)));
        }
    }

    let n = b.pool_size();
    let ell = b.alphabet().size();
    let mut max_err: f64 = 0.0;
    for x in 0..n {
        let err = (prior.abstain_marginal(x) - b.mean_abstention(x)?).abs();
        max_err = max_err.max(err);
        if err > IDENTITY_TOLERANCE {
            fail(Check::AbstainMarginal, format!("x={x}: error {err:e}"));
        }
        let direct = b.label_marginal(x)?;
        for (y, (a, d)) in prior.label_marginal(x).iter().zip(&direct).enumerate() {
            let err = (a - d).abs();
            max_err = max_err.max(err);
            if err > IDENTITY_TOLERANCE {
                fail(Check::LabelMarginal, format!("x={x}, y={}: error {err:e}", y + 1));
            }
        }
    }
    let responses: Vec<Response> = std::iter::once(Response::Abstain)
        .chain((1..=ell as u32).map(Response::Label))
        .collect();
    for x1 in 0..n {
        for x2 in x1..n {
            for &r1 in &responses {
                for &r2 in &responses {
                    let obs: Vec<(ExampleId, Response)> =
                        if x1 == x2 { vec![(x1, r1)] } else { vec![(x1, r1), (x2, r2)] };
                    let err = (prior.observation_mass(&obs) - direct_pair_mass(b, &obs)).abs();
                    max_err = max_err.max(err);
                    if err > IDENTITY_TOLERANCE {
                        fail(Check::Factorization, format!("{obs:?}: error {err:e}"));
                    }
                }
            }
        }
    }
    stats.max_identity_error = max_err;

    let bound = 1.0 - (-1.0f64).exp();
    for (objective, check) in [(Objective::Average, Check::BoundAverage), (Objective::Worst, Check::BoundWorst)] {
        let greedy = greedy_policy(b, inst.budget, objective)?;
        let g = prior.policy_value(&greedy, objective)?;
        let (_, opt) = prior.optimal_policy(inst.budget, objective)?;
        if g < bound * opt - VALUE_SLACK || g > opt + VALUE_SLACK {
            fail(check, format!("greedy {g}, optimal {opt}"));
        }
        let longer = prior.policy_value(&greedy.extended(n, b.alphabet()), objective)?;
        if longer < g - VALUE_SLACK {
            fail(Check::Monotonicity, format!("{objective:?}: extended policy {longer} < {g}"));
        }
        match objective {
            Objective::Average => stats.avg_values = (g, opt),
            Objective::Worst => stats.worst_values = (g, opt),
        }
    }
    Ok((stats, failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance: Instance,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub instances: usize,
    pub max_identity_error: f64,
    /// Smallest `G_greedy / G_optimal` seen, per objective, over instances
    /// with a positive optimum.
    pub min_ratio_avg: f64,
    pub min_ratio_worst: f64,
    pub failed: Vec<InstanceFailure>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Generates and checks `config.instances` instances in parallel.
pub fn run_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    config.check_capacity()?;
    let results: Vec<(Instance, InstanceStats, Vec<Failure>)> = (0..config.instances)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(config, i)?;
            let (stats, failures) = check_instance(&inst)?;
            Ok((inst, stats, failures))
        })
        .collect::<Result<_>>()?;
    let ratio = |(g, opt): (f64, f64)| if opt > 0.0 { g / opt } else { 1.0 };
    let mut report = VerifyReport {
        config: *config,
        instances: results.len(),
        max_identity_error: 0.0,
        min_ratio_avg: 1.0,
        min_ratio_worst: 1.0,
        failed: Vec::new(),
    };
    for (instance, stats, failures) in results {
        report.max_identity_error = report.max_identity_error.max(stats.max_identity_error);
        report.min_ratio_avg = report.min_ratio_avg.min(ratio(stats.avg_values));
        report.min_ratio_worst = report.min_ratio_worst.min(ratio(stats.worst_values));
        if !failures.is_empty() {
            report.failed.push(InstanceFailure { instance, failures });
        }
    }
    Ok(report)
}

/// Re-runs the checks on a dumped fixture.
pub fn replay_fixture(json: &str) -> Result<Vec<Failure>> {
    let fixture: InstanceFailure = serde_json::from_str(json)?;
    Ok(check_instance(&fixture.instance)?.1)
}
