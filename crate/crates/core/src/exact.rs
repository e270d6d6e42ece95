//! Exact Bayesian machinery over finite hypothesis sets.
//!
//! [`DiscreteBelief`] keeps independent weight vectors over label hypotheses
//! `h` and abstention hypotheses `r`. From it, [`JointPrior`] enumerates the
//! induced prior over every deterministic labeling `f` and abstention pattern
//! `k` of the pool, which is what the version space utility, policy values
//! and the brute-force optimal policy search are defined on.
//!
//! Everything here is exponential in the pool size and guarded accordingly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::{argmax_with_ties, BeliefView, Selector, StrategyKind, TIE_TOLERANCE};
use crate::types::{response_of, AbstentionPattern, ExampleId, LabelAlphabet, Labeling, Response};

/// Largest number of labelings `ℓ^|X|` [`JointPrior::induce`] will enumerate.
pub const MAX_LABELINGS: u64 = 1_000_000;

/// Largest number of policy-tree nodes a search may evaluate.
pub const MAX_SEARCH_NODES: u64 = 10_000_000;

/// Joint `(f, k)` pairs at or below this prior weight are outside the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-15;

const INPUT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Expected utility under the joint prior.
    Average,
    /// Minimum utility over the support of the joint prior.
    Worst,
}

impl Objective {
    /// The greedy strategy whose criterion targets this objective.
    pub fn greedy_strategy(self) -> StrategyKind {
        match self {
            Objective::Average => StrategyKind::Average,
            Objective::Worst => StrategyKind::Worst,
        }
    }
}

#[derive(Deserialize)]
struct RawBelief {
    hypotheses: Vec<Vec<Vec<f64>>>,
    h_weights: Vec<f64>,
    abstention: Vec<Vec<f64>>,
    r_weights: Vec<f64>,
}

/// Finite joint belief `p[h ∧ r] = p[h] p[r]`.
///
/// `hypotheses[h][x][y - 1]` is `P[h(x) = y]`; `abstention[r][x]` is `r(x)`.
/// The JSON form uses exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBelief")]
pub struct DiscreteBelief {
    hypotheses: Vec<Vec<Vec<f64>>>,
    h_weights: Vec<f64>,
    abstention: Vec<Vec<f64>>,
    r_weights: Vec<f64>,
}

impl TryFrom<RawBelief> for DiscreteBelief {
    type Error = Error;
    fn try_from(raw: RawBelief) -> Result<Self> {
        DiscreteBelief::new(raw.hypotheses, raw.h_weights, raw.abstention, raw.r_weights)
    }
}

fn normalized(weights: &[f64], what: &str) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::input(format!("{what} is empty")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::input(format!("{what} has negative or non-finite entries")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > INPUT_TOLERANCE {
        return Err(Error::input(format!("{what} sums to {total}, expected 1")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

impl DiscreteBelief {
    pub fn new(
        hypotheses: Vec<Vec<Vec<f64>>>,
        h_weights: Vec<f64>,
        abstention: Vec<Vec<f64>>,
        r_weights: Vec<f64>,
    ) -> Result<Self> {
        if hypotheses.len() != h_weights.len() {
            return Err(Error::input("one weight per label hypothesis required"));
        }
        if abstention.len() != r_weights.len() {
            return Err(Error::input("one weight per abstention hypothesis required"));
        }
        let h_weights = normalized(&h_weights, "h_weights")?;
        let r_weights = normalized(&r_weights, "r_weights")?;

        let n = hypotheses[0].len();
        if n == 0 {
            return Err(Error::input("empty pool"));
        }
        let ell = hypotheses[0][0].len();
        LabelAlphabet::new(ell as u32)?;
        let mut rows_out = Vec::with_capacity(hypotheses.len());
        for (hi, h) in hypotheses.into_iter().enumerate() {
            if h.len() != n {
                return Err(Error::input(format!("hypothesis {hi} covers {} examples, expected {n}", h.len())));
            }
            let mut rows = Vec::with_capacity(n);
            for (x, row) in h.into_iter().enumerate() {
                if row.len() != ell {
                    return Err(Error::input(format!("hypothesis {hi}, example {x}: expected {ell} labels")));
                }
                rows.push(normalized(&row, &format!("hypothesis {hi}, example {x}"))?);
            }
            rows_out.push(rows);
        }
        for (ri, r) in abstention.iter().enumerate() {
            if r.len() != n {
                return Err(Error::input(format!("abstention hypothesis {ri} covers {} examples, expected {n}", r.len())));
            }
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::input(format!("abstention hypothesis {ri} has rates outside [0, 1]")));
            }
        }
        Ok(DiscreteBelief { hypotheses: rows_out, h_weights, abstention, r_weights })
    }

    pub fn pool_size(&self) -> usize {
        self.hypotheses[0].len()
    }

    pub fn alphabet(&self) -> LabelAlphabet {
        LabelAlphabet::new(self.hypotheses[0][0].len() as u32).expect("validated on construction")
    }

    pub fn h_weights(&self) -> &[f64] {
        &self.h_weights
    }

    pub fn r_weights(&self) -> &[f64] {
        &self.r_weights
    }

    /// `P[h(x) = y]` rows of every label hypothesis.
    pub fn hypotheses(&self) -> &[Vec<Vec<f64>>] {
        &self.hypotheses
    }

    pub fn abstention_hypotheses(&self) -> &[Vec<f64>] {
        &self.abstention
    }

    fn check(&self, x: ExampleId) -> Result<()> {
        if x < self.pool_size() {
            Ok(())
        } else {
            Err(Error::UnknownExample(x))
        }
    }

    /// Bayes update after observing `resp` on `x`.
    ///
    /// A label reweights `h` by `P[h(x) = y]` and `r` by `1 − r(x)`; an
    /// abstention leaves `h` alone and reweights `r` by `r(x)`.
    pub fn update(&self, x: ExampleId, resp: Response) -> Result<Self> {
        self.check(x)?;
        let contradiction = || Error::Contradiction { x, response: resp.to_string() };
        let reweight = |weights: &[f64], factor: &dyn Fn(usize) -> f64| -> Option<Vec<f64>> {
            let raw: Vec<f64> = weights.iter().enumerate().map(|(i, w)| w * factor(i)).collect();
            let total: f64 = raw.iter().sum();
            (total > 0.0).then(|| raw.into_iter().map(|w| w / total).collect())
        };
        let mut next = self.clone();
        match resp {
            Response::Label(y) => {
                self.alphabet().check(y)?;
                let col = (y - 1) as usize;
                next.h_weights = reweight(&self.h_weights, &|h| self.hypotheses[h][x][col])
                    .ok_or_else(contradiction)?;
                next.r_weights = reweight(&self.r_weights, &|r| 1.0 - self.abstention[r][x])
                    .ok_or_else(contradiction)?;
            }
            Response::Abstain => {
                next.r_weights = reweight(&self.r_weights, &|r| self.abstention[r][x])
                    .ok_or_else(contradiction)?;
            }
        }
        Ok(next)
    }

    /// `p[Y = y; x] = Σ_h p[h] P[h(x) = y]`.
    pub fn label_marginal(&self, x: ExampleId) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; self.alphabet().size()];
        for (h, w) in self.hypotheses.iter().zip(&self.h_weights) {
            for (o, p) in out.iter_mut().zip(&h[x]) {
                *o += w * p;
            }
        }
        Ok(out)
    }

    /// `r̃(x) = Σ_r p[r] r(x)`.
    pub fn mean_abstention(&self, x: ExampleId) -> Result<f64> {
        self.check(x)?;
        Ok(self.abstention.iter().zip(&self.r_weights).map(|(r, w)| w * r[x]).sum())
    }
}

impl BeliefView for DiscreteBelief {
    fn alphabet(&self) -> LabelAlphabet {
        DiscreteBelief::alphabet(self)
    }
    fn label_dist(&self, x: ExampleId) -> Vec<f64> {
        self.label_marginal(x).expect("example id in pool")
    }
    fn abstention(&self, x: ExampleId) -> f64 {
        self.mean_abstention(x).expect("example id in pool")
    }
}

/// A realization `(f, k)` from the support of the joint prior, by index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Realization {
    pub labeling: usize,
    pub pattern: usize,
    pub weight: f64,
}

/// Induced prior over all labelings `F` and abstention patterns `K` of the
/// pool, with `q₀[f ∧ k] = q₀[f] q₀[k]`.
///
/// Labelings are indexed in mixed radix with example 0 as the least
/// significant digit; patterns are bitmasks with bit `x` set when `k(x) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrior {
    alphabet: LabelAlphabet,
    pool_size: usize,
    labeling_weights: Vec<f64>,
    pattern_weights: Vec<f64>,
    radix_powers: Vec<usize>,
}

impl JointPrior {
    /// `q₀[f] = Σ_h p[h] Π_x P[h(x) = f(x)]` and
    /// `q₀[k] = Σ_r p[r] Π_x (1 − r(x))^{1−k(x)} r(x)^{k(x)}`.
    pub fn induce(belief: &DiscreteBelief) -> Result<Self> {
        let n = belief.pool_size();
        let ell = belief.alphabet().size();
        let labelings = (ell as u64).checked_pow(n as u32).filter(|&c| c <= MAX_LABELINGS);
        let Some(labelings) = labelings else {
            return Err(Error::Capacity(format!(
                "{ell}^{n} labelings exceed the enumeration limit of {MAX_LABELINGS}"
            )));
        };
        let labelings = labelings as usize;
        let radix_powers: Vec<usize> = (0..n).map(|x| ell.pow(x as u32)).collect();

        let mut labeling_weights = vec![0.0; labelings];
        for (code, q) in labeling_weights.iter_mut().enumerate() {
            *q = belief
                .hypotheses
                .iter()
                .zip(&belief.h_weights)
                .map(|(h, w)| {
                    let mut prob = *w;
                    for (x, row) in h.iter().enumerate() {
                        prob *= row[(code / radix_powers[x]) % ell];
                    }
                    prob
                })
                .sum();
        }

        let mut pattern_weights = vec![0.0; 1 << n];
        for (mask, q) in pattern_weights.iter_mut().enumerate() {
            *q = belief
                .abstention
                .iter()
                .zip(&belief.r_weights)
                .map(|(r, w)| {
                    let mut prob = *w;
                    for (x, rate) in r.iter().enumerate() {
                        prob *= if mask >> x & 1 == 1 { *rate } else { 1.0 - rate };
                    }
                    prob
                })
                .sum();
        }

        Ok(JointPrior {
            alphabet: belief.alphabet(),
            pool_size: n,
            labeling_weights,
            pattern_weights,
            radix_powers,
        })
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn alphabet(&self) -> LabelAlphabet {
        self.alphabet
    }

    pub fn labeling_weights(&self) -> &[f64] {
        &self.labeling_weights
    }

    pub fn pattern_weights(&self) -> &[f64] {
        &self.pattern_weights
    }

    fn digit(&self, code: usize, x: ExampleId) -> u32 {
        ((code / self.radix_powers[x]) % self.alphabet.size()) as u32 + 1
    }

    pub fn labeling(&self, code: usize) -> Labeling {
        let labels = (0..self.pool_size).map(|x| self.digit(code, x)).collect();
        Labeling::new(labels, self.alphabet).expect("digits are in the alphabet")
    }

    pub fn pattern(&self, mask: usize) -> AbstentionPattern {
        AbstentionPattern::new((0..self.pool_size).map(|x| mask >> x & 1 == 1).collect())
    }

    pub fn labeling_index(&self, f: &Labeling) -> Result<usize> {
        if f.len() != self.pool_size {
            return Err(Error::input("labeling does not cover the pool"));
        }
        f.as_slice().iter().enumerate().try_fold(0, |acc, (x, &y)| {
            self.alphabet.check(y)?;
            Ok(acc + (y as usize - 1) * self.radix_powers[x])
        })
    }

    pub fn pattern_index(&self, k: &AbstentionPattern) -> Result<usize> {
        if k.len() != self.pool_size {
            return Err(Error::input("abstention pattern does not cover the pool"));
        }
        Ok(k.as_slice().iter().enumerate().fold(0, |acc, (x, &b)| acc | (usize::from(b) << x)))
    }

    /// `q₀[Y = y on the given examples]`, summed over all labelings.
    pub fn label_mass(&self, labels: &[(ExampleId, u32)]) -> f64 {
        self.labeling_weights
            .iter()
            .enumerate()
            .filter(|&(code, _)| labels.iter().all(|&(x, y)| self.digit(code, x) == y))
            .map(|(_, w)| w)
            .sum()
    }

    /// `q₀[Z = z on the given examples]`, summed over all patterns.
    pub fn pattern_mass(&self, bits: &[(ExampleId, bool)]) -> f64 {
        self.pattern_weights
            .iter()
            .enumerate()
            .filter(|&(mask, _)| bits.iter().all(|&(x, b)| (mask >> x & 1 == 1) == b))
            .map(|(_, w)| w)
            .sum()
    }

    /// Prior probability of seeing exactly these responses. Labels are only
    /// observed where the labeler did not abstain.
    pub fn observation_mass(&self, observations: &[(ExampleId, Response)]) -> f64 {
        let labels: Vec<(ExampleId, u32)> = observations
            .iter()
            .filter_map(|&(x, r)| match r {
                Response::Label(y) => Some((x, y)),
                Response::Abstain => None,
            })
            .collect();
        let bits: Vec<(ExampleId, bool)> =
            observations.iter().map(|&(x, r)| (x, r.is_abstain())).collect();
        self.label_mass(&labels) * self.pattern_mass(&bits)
    }

    /// `p[Y = y; x]` under `q₀`, by enumeration.
    pub fn label_marginal(&self, x: ExampleId) -> Vec<f64> {
        self.alphabet.labels().map(|y| self.label_mass(&[(x, y)])).collect()
    }

    /// `p[Z = 1; x]` under `q₀`, by enumeration.
    pub fn abstain_marginal(&self, x: ExampleId) -> f64 {
        self.pattern_mass(&[(x, true)])
    }

    /// Every `(f, k)` with `q₀[f] q₀[k]` above [`SUPPORT_THRESHOLD`].
    pub fn support(&self) -> Vec<Realization> {
        let mut out = Vec::new();
        for (labeling, &qf) in self.labeling_weights.iter().enumerate() {
            for (pattern, &qk) in self.pattern_weights.iter().enumerate() {
                let weight = qf * qk;
                if weight > SUPPORT_THRESHOLD {
                    out.push(Realization { labeling, pattern, weight });
                }
            }
        }
        out
    }

    fn respond(&self, real: &Realization, x: ExampleId) -> Response {
        if real.pattern >> x & 1 == 1 {
            Response::Abstain
        } else {
            Response::Label(self.digit(real.labeling, x))
        }
    }

    fn check_ids(&self, ids: &[ExampleId]) -> Result<()> {
        match ids.iter().find(|&&x| x >= self.pool_size) {
            Some(&x) => Err(Error::UnknownExample(x)),
            None => Ok(()),
        }
    }

    /// Version space reduction `g(S, (f, k))`: one minus the prior mass of
    /// everything consistent with the responses `(f, k)` produces on `S`.
    /// Labels of abstained examples are never revealed, so they do not
    /// shrink the version space.
    pub fn utility(&self, ids: &[ExampleId], f: &Labeling, k: &AbstentionPattern) -> Result<f64> {
        self.check_ids(ids)?;
        let observations = ids
            .iter()
            .map(|&x| Ok((x, response_of(f, k, x)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(1.0 - self.observation_mass(&observations))
    }

    /// `1 − q₀[Y = f(S); S] q₀[Z = k(S); S]`, conditioning on `f` over all of
    /// `S` including abstained examples. Kept for comparison with
    /// [`JointPrior::utility`]; the greedy criteria are not equivalent to
    /// greedy maximization of this form.
    pub fn full_joint_utility(
        &self,
        ids: &[ExampleId],
        f: &Labeling,
        k: &AbstentionPattern,
    ) -> Result<f64> {
        self.check_ids(ids)?;
        let labels = ids.iter().map(|&x| Ok((x, f.get(x)?))).collect::<Result<Vec<_>>>()?;
        let bits = ids.iter().map(|&x| Ok((x, k.get(x)?))).collect::<Result<Vec<_>>>()?;
        Ok(1.0 - self.label_mass(&labels) * self.pattern_mass(&bits))
    }

    /// Exact one-step gain of querying each example from the empty history:
    /// expected over the prior, or minimum over its support.
    pub fn one_step_gains(&self, objective: Objective) -> Vec<f64> {
        let support = self.support();
        (0..self.pool_size)
            .map(|x| {
                let gains = support.iter().map(|real| {
                    (real.weight, 1.0 - self.observation_mass(&[(x, self.respond(real, x))]))
                });
                match objective {
                    Objective::Average => gains.map(|(w, g)| w * g).sum(),
                    Objective::Worst => gains.map(|(_, g)| g).fold(f64::INFINITY, f64::min),
                }
            })
            .collect()
    }

    /// `G_avg` or `G_worst` of a policy, by running it on every realization
    /// in the support.
    pub fn policy_value(&self, policy: &PolicyTree, objective: Objective) -> Result<f64> {
        policy.validate(self.pool_size, self.alphabet)?;
        let mut total = 0.0;
        let mut worst = f64::INFINITY;
        for real in self.support() {
            let observations = policy.run_with(|x| self.respond(&real, x));
            let g = 1.0 - self.observation_mass(&observations);
            total += real.weight * g;
            worst = worst.min(g);
        }
        Ok(match objective {
            Objective::Average => total,
            Objective::Worst => worst,
        })
    }

    /// Exhaustive search over adaptive policies of depth `min(budget, |X|)`.
    /// Ties go to the lowest query id at every node.
    pub fn optimal_policy(&self, budget: usize, objective: Objective) -> Result<(PolicyTree, f64)> {
        let depth = budget.min(self.pool_size);
        check_search_size(self.pool_size, self.alphabet, depth)?;
        let support = self.support();
        let mut search = OptimalSearch {
            prior: self,
            objective,
            history: Vec::with_capacity(depth),
            queried: vec![false; self.pool_size],
        };
        let (tree, value) = search.solve(&support, depth);
        Ok((tree, value.unwrap_or(0.0)))
    }
}

/// Upper bound on nodes in an adaptive tree of the given depth, rejected
/// above [`MAX_SEARCH_NODES`].
pub fn check_search_size(pool_size: usize, alphabet: LabelAlphabet, depth: usize) -> Result<()> {
    let branching = alphabet.size() as u64 + 1;
    let mut level: u64 = 1;
    let mut total: u64 = 1;
    for i in 0..depth {
        level = level.saturating_mul((pool_size - i) as u64).saturating_mul(branching);
        total = total.saturating_add(level);
    }
    if total > MAX_SEARCH_NODES {
        return Err(Error::Capacity(format!(
            "policy search over {pool_size} examples at depth {depth} needs up to {total} nodes (limit {MAX_SEARCH_NODES})"
        )));
    }
    Ok(())
}

struct OptimalSearch<'a> {
    prior: &'a JointPrior,
    objective: Objective,
    history: Vec<(ExampleId, Response)>,
    queried: Vec<bool>,
}

impl OptimalSearch<'_> {
    /// Best subtree for the realizations consistent with the current
    /// history. Returns `None` as the value when `members` is empty.
    fn solve(&mut self, members: &[Realization], depth: usize) -> (PolicyTree, Option<f64>) {
        if members.is_empty() {
            return (PolicyTree::Leaf, None);
        }
        if depth == 0 {
            let g = 1.0 - self.prior.observation_mass(&self.history);
            let value = match self.objective {
                Objective::Average => members.iter().map(|m| m.weight).sum::<f64>() * g,
                Objective::Worst => g,
            };
            return (PolicyTree::Leaf, Some(value));
        }
        let branches = self.prior.alphabet.size() + 1;
        let mut best: Option<(PolicyTree, f64)> = None;
        for x in 0..self.prior.pool_size {
            if self.queried[x] {
                continue;
            }
            let mut groups: Vec<Vec<Realization>> = vec![Vec::new(); branches];
            for m in members {
                groups[self.prior.respond(m, x).branch()].push(*m);
            }
            self.queried[x] = true;
            let mut children = Vec::with_capacity(branches);
            let mut value: Option<f64> = None;
            for (slot, group) in groups.iter().enumerate() {
                self.history.push((x, Response::from_code(slot as u32)));
                let (child, child_value) = self.solve(group, depth - 1);
                self.history.pop();
                children.push(child);
                if let Some(v) = child_value {
                    value = Some(match (self.objective, value) {
                        (_, None) => v,
                        (Objective::Average, Some(acc)) => acc + v,
                        (Objective::Worst, Some(acc)) => acc.min(v),
                    });
                }
            }
            self.queried[x] = false;
            let value = value.expect("nonempty members land in some branch");
            if best.as_ref().is_none_or(|(_, b)| value > b + TIE_TOLERANCE) {
                best = Some((PolicyTree::Query { x, children }, value));
            }
        }
        let (tree, value) = best.expect("depth never exceeds the number of unqueried examples");
        (tree, Some(value))
    }
}

/// An adaptive query policy. A query node has one child per response:
/// slot 0 for abstain and slot `y` for label `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyTree {
    Leaf,
    Query { x: ExampleId, children: Vec<PolicyTree> },
}

impl PolicyTree {
    /// A path querying `ids` in order regardless of responses.
    pub fn sequence(ids: &[ExampleId], alphabet: LabelAlphabet) -> Self {
        match ids.split_first() {
            None => PolicyTree::Leaf,
            Some((&x, rest)) => PolicyTree::Query {
                x,
                children: vec![PolicyTree::sequence(rest, alphabet); alphabet.size() + 1],
            },
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            PolicyTree::Leaf => 0,
            PolicyTree::Query { children, .. } => {
                1 + children.iter().map(PolicyTree::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            PolicyTree::Leaf => 1,
            PolicyTree::Query { children, .. } => {
                1 + children.iter().map(PolicyTree::node_count).sum::<usize>()
            }
        }
    }

    /// Checks ids are in the pool, children cover every response, and no id
    /// repeats on a root-to-leaf path.
    pub fn validate(&self, pool_size: usize, alphabet: LabelAlphabet) -> Result<()> {
        fn walk(t: &PolicyTree, n: usize, branches: usize, path: &mut Vec<ExampleId>) -> Result<()> {
            if let PolicyTree::Query { x, children } = t {
                if *x >= n {
                    return Err(Error::UnknownExample(*x));
                }
                if path.contains(x) {
                    return Err(Error::input(format!("example {x} repeats on a policy path")));
                }
                if children.len() != branches {
                    return Err(Error::input(format!(
                        "query node on {x} has {} children, expected {branches}",
                        children.len()
                    )));
                }
                path.push(*x);
                for c in children {
                    walk(c, n, branches, path)?;
                }
                path.pop();
            }
            Ok(())
        }
        walk(self, pool_size, alphabet.size() + 1, &mut Vec::new())
    }

    /// Follows the policy against a responder and returns the observations.
    pub fn run_with(&self, mut respond: impl FnMut(ExampleId) -> Response) -> Vec<(ExampleId, Response)> {
        let mut out = Vec::new();
        let mut node = self;
        while let PolicyTree::Query { x, children } = node {
            let r = respond(*x);
            out.push((*x, r));
            node = &children[r.branch()];
        }
        out
    }

    /// The observations `x^π_{f,k}` when the labeler follows `(f, k)`.
    pub fn run(&self, f: &Labeling, k: &AbstentionPattern) -> Result<Vec<(ExampleId, Response)>> {
        let mut err = None;
        let obs = self.run_with(|x| match response_of(f, k, x) {
            Ok(r) => r,
            Err(e) => {
                err.get_or_insert(e);
                Response::Abstain
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(obs),
        }
    }

    /// Appends one more query below every leaf, choosing the lowest id not
    /// yet on the path. Leaves whose path already covers the pool stay.
    pub fn extended(&self, pool_size: usize, alphabet: LabelAlphabet) -> PolicyTree {
        fn go(t: &PolicyTree, n: usize, alphabet: LabelAlphabet, path: &mut Vec<ExampleId>) -> PolicyTree {
            match t {
                PolicyTree::Leaf => match (0..n).find(|x| !path.contains(x)) {
                    Some(x) => PolicyTree::sequence(&[x], alphabet),
                    None => PolicyTree::Leaf,
                },
                PolicyTree::Query { x, children } => {
                    path.push(*x);
                    let children = children.iter().map(|c| go(c, n, alphabet, path)).collect();
                    path.pop();
                    PolicyTree::Query { x: *x, children }
                }
            }
        }
        go(self, pool_size, alphabet, &mut Vec::new())
    }
}

/// Builds the adaptive greedy tree: at each node, the criterion targeting
/// `objective` is applied to the belief updated along that branch.
/// Branches the belief rules out become leaves.
pub fn greedy_policy(belief: &DiscreteBelief, budget: usize, objective: Objective) -> Result<PolicyTree> {
    let depth = budget.min(belief.pool_size());
    let nodes = (belief.alphabet().size() as u64 + 1).checked_pow(depth as u32);
    if nodes.is_none_or(|n| n > MAX_SEARCH_NODES) {
        return Err(Error::Capacity(format!("greedy tree of depth {depth} exceeds {MAX_SEARCH_NODES} nodes")));
    }
    let selector = Selector::new(objective.greedy_strategy())?;
    let mut queried = vec![false; belief.pool_size()];
    greedy_node(belief, &selector, depth, &mut queried)
}

fn greedy_node(
    belief: &DiscreteBelief,
    selector: &Selector,
    depth: usize,
    queried: &mut [bool],
) -> Result<PolicyTree> {
    if depth == 0 {
        return Ok(PolicyTree::Leaf);
    }
    let unqueried: Vec<ExampleId> = (0..queried.len()).filter(|&x| !queried[x]).collect();
    // Active criteria never consult the generator.
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    let x = selector.select(belief, &unqueried, &mut no_rng)?.x;
    queried[x] = true;
    let mut children = Vec::with_capacity(belief.alphabet().size() + 1);
    for slot in 0..=belief.alphabet().size() {
        let child = match belief.update(x, Response::from_code(slot as u32)) {
            Ok(next) => greedy_node(&next, selector, depth - 1, queried)?,
            Err(Error::Contradiction { .. }) => PolicyTree::Leaf,
            Err(e) => return Err(e),
        };
        children.push(child);
    }
    queried[x] = false;
    Ok(PolicyTree::Query { x, children })
}

/// Lowest-id argmax of the exact one-step gain, the brute-force counterpart
/// of the greedy criteria at the root.
pub fn brute_force_greedy_choice(prior: &JointPrior, objective: Objective) -> ExampleId {
    argmax_with_ties(&prior.one_step_gains(objective)).expect("pool is nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binary_rows(ps: &[f64]) -> Vec<Vec<f64>> {
        ps.iter().map(|&p| vec![p, 1.0 - p]).collect()
    }

    /// One example, two deterministic label hypotheses and the given rates.
    fn single(rates: &[f64]) -> DiscreteBelief {
        DiscreteBelief::new(
            vec![binary_rows(&[1.0]), binary_rows(&[0.0])],
            vec![0.5, 0.5],
            rates.iter().map(|&r| vec![r]).collect(),
            vec![1.0 / rates.len() as f64; rates.len()],
        )
        .unwrap()
    }

    #[test]
    fn label_update_reweights_both_factors() {
        let b = DiscreteBelief::new(
            vec![binary_rows(&[0.9]), binary_rows(&[0.1])],
            vec![0.5, 0.5],
            vec![vec![0.2], vec![0.6]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let next = b.update(0, Response::Label(1)).unwrap();
        assert_abs_diff_eq!(next.h_weights()[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(next.h_weights()[1], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(next.r_weights()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next.r_weights()[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next.mean_abstention(0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn abstain_update_leaves_label_weights() {
        let b = single(&[0.2, 0.8]);
        let next = b.update(0, Response::Abstain).unwrap();
        assert_eq!(next.h_weights(), b.h_weights());
        assert_abs_diff_eq!(next.r_weights()[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(next.r_weights()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn impossible_response_is_a_contradiction() {
        let b = single(&[0.0]);
        assert!(matches!(b.update(0, Response::Abstain), Err(Error::Contradiction { .. })));
        let sure = DiscreteBelief::new(vec![binary_rows(&[1.0])], vec![1.0], vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(matches!(sure.update(0, Response::Label(2)), Err(Error::Contradiction { .. })));
        assert!(matches!(sure.update(3, Response::Label(1)), Err(Error::UnknownExample(3))));
        assert!(sure.update(0, Response::Label(3)).is_err());
    }

    #[test]
    fn label_marginal_mixes_rows() {
        let b = DiscreteBelief::new(
            vec![binary_rows(&[0.9]), binary_rows(&[0.3])],
            vec![0.5, 0.5],
            vec![vec![0.0]],
            vec![1.0],
        )
        .unwrap();
        assert_abs_diff_eq!(b.label_marginal(0).unwrap()[0], 0.6, epsilon = 1e-15);
        let lopsided = DiscreteBelief::new(
            vec![binary_rows(&[0.9]), binary_rows(&[0.3])],
            vec![1.0, 0.0],
            vec![vec![0.0]],
            vec![1.0],
        )
        .unwrap();
        assert_eq!(lopsided.label_marginal(0).unwrap(), vec![0.9, 1.0 - 0.9]);
        assert_eq!(b.mean_abstention(0).unwrap(), 0.0);
        assert_abs_diff_eq!(single(&[0.2, 0.8]).mean_abstention(0).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn fixture_json_round_trips() {
        let json = r#"{"hypotheses": [[[0.9, 0.1]], [[0.1, 0.9]]], "h_weights": [0.5, 0.5],
                       "abstention": [[0.2]], "r_weights": [1.0]}"#;
        let b: DiscreteBelief = serde_json::from_str(json).unwrap();
        assert_eq!(b.pool_size(), 1);
        let back: DiscreteBelief = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back, b);
        let bad = r#"{"hypotheses": [[[0.9, 0.3]]], "h_weights": [1.0], "abstention": [[0.2]], "r_weights": [1.0]}"#;
        assert!(serde_json::from_str::<DiscreteBelief>(bad).is_err());
    }

    #[test]
    fn induced_prior_examples() {
        let q = JointPrior::induce(&single(&[0.2, 0.8])).unwrap();
        assert_abs_diff_eq!(q.labeling_weights()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q.labeling_weights()[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q.pattern_weights()[1], 0.5, epsilon = 1e-15);

        let q = JointPrior::induce(&single(&[0.0])).unwrap();
        assert_eq!(q.pattern_weights(), &[1.0, 0.0]);
    }

    #[test]
    fn induce_refuses_huge_pools() {
        let rows = vec![vec![1.0 / 3.0; 3]; 13];
        let b = DiscreteBelief::new(vec![rows], vec![1.0], vec![vec![0.5; 13]], vec![1.0]).unwrap();
        assert!(matches!(JointPrior::induce(&b), Err(Error::Capacity(_))));
        let rows = vec![vec![1.0 / 3.0; 3]; 12];
        let b = DiscreteBelief::new(vec![rows], vec![1.0], vec![vec![0.5; 12]], vec![1.0]).unwrap();
        assert!(JointPrior::induce(&b).is_ok());
    }

    #[test]
    fn utility_examples() {
        let q = JointPrior::induce(&single(&[0.5])).unwrap();
        let alpha = LabelAlphabet::BINARY;
        for y in [1, 2] {
            for abstain in [false, true] {
                let f = Labeling::new(vec![y], alpha).unwrap();
                let k = AbstentionPattern::new(vec![abstain]);
                assert_eq!(q.utility(&[], &f, &k).unwrap(), 0.0);
                assert_abs_diff_eq!(q.full_joint_utility(&[0], &f, &k).unwrap(), 0.75, epsilon = 1e-15);
                // Abstaining reveals the pattern bit only.
                let expected = if abstain { 0.5 } else { 0.75 };
                assert_abs_diff_eq!(q.utility(&[0], &f, &k).unwrap(), expected, epsilon = 1e-15);
            }
        }

        let point = DiscreteBelief::new(
            vec![binary_rows(&[1.0, 0.0])],
            vec![1.0],
            vec![vec![0.0, 1.0]],
            vec![1.0],
        )
        .unwrap();
        let q = JointPrior::induce(&point).unwrap();
        let f = Labeling::new(vec![1, 2], alpha).unwrap();
        let k = AbstentionPattern::new(vec![false, true]);
        assert_eq!(q.utility(&[0, 1], &f, &k).unwrap(), 0.0);
        assert_eq!(q.full_joint_utility(&[1], &f, &k).unwrap(), 0.0);
    }

    #[test]
    fn policy_value_single_query() {
        let q = JointPrior::induce(&single(&[0.5])).unwrap();
        let alpha = LabelAlphabet::BINARY;
        let query = PolicyTree::sequence(&[0], alpha);
        assert_abs_diff_eq!(q.policy_value(&query, Objective::Average).unwrap(), 0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(q.policy_value(&query, Objective::Worst).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(q.policy_value(&PolicyTree::Leaf, Objective::Average).unwrap(), 0.0);
        assert_eq!(q.policy_value(&PolicyTree::Leaf, Objective::Worst).unwrap(), 0.0);
    }

    fn two_exchangeable() -> DiscreteBelief {
        DiscreteBelief::new(
            vec![binary_rows(&[0.8, 0.8]), binary_rows(&[0.3, 0.3])],
            vec![0.5, 0.5],
            vec![vec![0.1, 0.1], vec![0.7, 0.7]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn optimal_full_budget_is_order_invariant() {
        let b = DiscreteBelief::new(
            vec![binary_rows(&[0.8, 0.2, 0.5]), binary_rows(&[0.3, 0.6, 0.9])],
            vec![0.4, 0.6],
            vec![vec![0.1, 0.5, 0.3], vec![0.7, 0.2, 0.9]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let q = JointPrior::induce(&b).unwrap();
        let alpha = LabelAlphabet::BINARY;
        for objective in [Objective::Average, Objective::Worst] {
            let (_, best) = q.optimal_policy(3, objective).unwrap();
            for order in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
                let v = q.policy_value(&PolicyTree::sequence(&order, alpha), objective).unwrap();
                assert_abs_diff_eq!(v, best, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn optimal_single_query_matches_scan() {
        let b = DiscreteBelief::new(
            vec![binary_rows(&[0.8, 0.2, 0.5]), binary_rows(&[0.3, 0.6, 0.9])],
            vec![0.4, 0.6],
            vec![vec![0.1, 0.5, 0.3], vec![0.7, 0.2, 0.9]],
            vec![0.3, 0.7],
        )
        .unwrap();
        let q = JointPrior::induce(&b).unwrap();
        let alpha = LabelAlphabet::BINARY;
        for objective in [Objective::Average, Objective::Worst] {
            let scan: Vec<f64> = (0..3)
                .map(|x| q.policy_value(&PolicyTree::sequence(&[x], alpha), objective).unwrap())
                .collect();
            let (tree, value) = q.optimal_policy(1, objective).unwrap();
            let best = argmax_with_ties(&scan).unwrap();
            assert_eq!(tree, PolicyTree::sequence(&[best], alpha));
            assert_abs_diff_eq!(value, scan[best], epsilon = 1e-15);
        }
    }

    #[test]
    fn optimal_ties_go_to_lower_id() {
        let q = JointPrior::induce(&two_exchangeable()).unwrap();
        for objective in [Objective::Average, Objective::Worst] {
            let (tree, _) = q.optimal_policy(1, objective).unwrap();
            assert!(matches!(tree, PolicyTree::Query { x: 0, .. }));
        }
    }

    #[test]
    fn optimal_search_is_guarded() {
        let rows = vec![vec![0.5, 0.5]; 12];
        let b = DiscreteBelief::new(vec![rows], vec![1.0], vec![vec![0.5; 12]], vec![1.0]).unwrap();
        let q = JointPrior::induce(&b).unwrap();
        assert!(matches!(q.optimal_policy(8, Objective::Average), Err(Error::Capacity(_))));
    }

    #[test]
    fn greedy_root_matches_brute_force() {
        let b = DiscreteBelief::new(
            vec![binary_rows(&[0.8, 0.2, 0.5]), binary_rows(&[0.3, 0.6, 0.9])],
            vec![0.4, 0.6],
            vec![vec![0.1, 0.5, 0.9], vec![0.7, 0.2, 0.95]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let q = JointPrior::induce(&b).unwrap();
        for objective in [Objective::Average, Objective::Worst] {
            let tree = greedy_policy(&b, 1, objective).unwrap();
            let PolicyTree::Query { x, .. } = tree else { panic!("expected a query") };
            assert_eq!(x, brute_force_greedy_choice(&q, objective));
        }
    }

    #[test]
    fn no_abstention_reduces_to_gibbs() {
        let b = DiscreteBelief::new(
            vec![binary_rows(&[0.55, 0.9, 0.7])],
            vec![1.0],
            vec![vec![0.0; 3]],
            vec![1.0],
        )
        .unwrap();
        let PolicyTree::Query { x, .. } = greedy_policy(&b, 1, Objective::Average).unwrap() else {
            panic!()
        };
        assert_eq!(x, 0);
    }

    #[test]
    fn extending_a_policy_keeps_it_valid() {
        let b = two_exchangeable();
        let alpha = b.alphabet();
        let tree = greedy_policy(&b, 1, Objective::Average).unwrap();
        let ext = tree.extended(2, alpha);
        ext.validate(2, alpha).unwrap();
        assert_eq!(ext.depth(), 2);
        let q = JointPrior::induce(&b).unwrap();
        assert!(q.policy_value(&ext, Objective::Average).unwrap() >= q.policy_value(&tree, Objective::Average).unwrap());
    }

    #[test]
    fn validate_rejects_repeats() {
        let alpha = LabelAlphabet::BINARY;
        let t = PolicyTree::sequence(&[0, 0], alpha);
        assert!(t.validate(2, alpha).is_err());
        assert!(PolicyTree::sequence(&[5], alpha).validate(2, alpha).is_err());
    }
}
