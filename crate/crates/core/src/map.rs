//! Logistic-regression label and abstention models fit by MAP estimation.
//!
//! Every parameter, bias included, carries an independent Gaussian prior, so
//! the log posterior is the Bernoulli log-likelihood minus an `ℓ₂` penalty
//! and has a unique maximizer. A prior may be centered at a previously
//! fitted model, which is how a finished session's abstention posterior
//! seeds the next one.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::optim;
use crate::strategy::BeliefView;
use crate::types::{Example, ExampleId, LabelAlphabet, Pool, Response, SparseVector};

/// Active sets up to this size are fit with Newton's method, larger ones
/// with L-BFGS.
const NEWTON_MAX_VARIABLES: usize = 512;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Linear logit model `sigmoid(w·x + b)` with its prior variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub sigma2: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize, sigma2: f64) -> Self {
        LinearModel { weights: vec![0.0; dim], bias: 0.0, sigma2 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    /// Probability of the positive outcome (label 2, or abstain).
    pub fn prob(&self, x: &SparseVector) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Pads or checks the weight vector against a dataset dimensionality.
    pub fn resized(mut self, dim: usize) -> Result<Self> {
        if self.weights.len() > dim {
            if self.weights[dim..].iter().any(|&w| w != 0.0) {
                return Err(Error::input(format!(
                    "model has weights beyond dimension {dim}"
                )));
            }
            self.weights.truncate(dim);
        }
        self.weights.resize(dim, 0.0);
        Ok(self)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    sigma2: f64,
    bias: f64,
    weights: Vec<(u32, f64)>,
}

impl Serialize for LinearModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Checkpoint {
            sigma2: self.sigma2,
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let c = Checkpoint::deserialize(d)?;
        if !(c.sigma2 > 0.0 && c.sigma2.is_finite()) {
            return Err(D::Error::custom("sigma2 must be positive"));
        }
        let dim = c.weights.iter().map(|&(i, _)| i as usize + 1).max().unwrap_or(0);
        let mut weights = vec![0.0; dim];
        for (i, w) in c.weights {
            weights[i as usize] = w;
        }
        Ok(LinearModel { weights, bias: c.bias, sigma2: c.sigma2 })
    }
}

/// Independent `N(mean, σ²)` on every weight and on the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub sigma2: f64,
    /// Center of the prior; `None` means the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<LinearModel>,
}

impl GaussianPrior {
    pub fn isotropic(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::input(format!("prior variance must be positive, got {sigma2}")));
        }
        Ok(GaussianPrior { sigma2, mean: None })
    }

    /// A prior centered at a fitted model, with that model's variance.
    pub fn centered_at(model: LinearModel) -> Self {
        GaussianPrior { sigma2: model.sigma2, mean: Some(model) }
    }

    fn mean_weight(&self, i: usize) -> f64 {
        self.mean.as_ref().and_then(|m| m.weights.get(i).copied()).unwrap_or(0.0)
    }

    fn mean_bias(&self) -> f64 {
        self.mean.as_ref().map_or(0.0, |m| m.bias)
    }

    /// The prior mode as a model of the given dimensionality.
    pub fn mode(&self, dim: usize) -> LinearModel {
        LinearModel {
            weights: (0..dim).map(|i| self.mean_weight(i)).collect(),
            bias: self.mean_bias(),
            sigma2: self.sigma2,
        }
    }
}

/// Binary outcomes keyed by example id: `true` is label 2 for the label
/// model and "abstained" for the abstention model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    entries: Vec<(ExampleId, bool)>,
}

impl Observations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(ExampleId, bool)>) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(&(x, _)) = entries.iter().find(|(x, _)| !seen.insert(*x)) {
            return Err(Error::input(format!("example {x} observed twice")));
        }
        Ok(Observations { entries })
    }

    pub fn push(&mut self, x: ExampleId, outcome: bool) -> Result<()> {
        if self.entries.iter().any(|&(e, _)| e == x) {
            return Err(Error::input(format!("example {x} observed twice")));
        }
        self.entries.push((x, outcome));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(ExampleId, bool)] {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Gradient-norm target; `None` means `1e-8 · max(1, |obs|)`.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// When false the bias stays at its prior mean.
    #[serde(default = "default_true")]
    pub fit_intercept: bool,
}

fn default_max_iter() -> usize {
    500
}

fn default_true() -> bool {
    true
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: None, max_iter: default_max_iter(), fit_intercept: true }
    }
}

impl FitOptions {
    pub fn tolerance(&self, n_obs: usize) -> f64 {
        self.tol.unwrap_or(1e-8 * (n_obs.max(1) as f64))
    }
}

/// Log posterior (up to a constant) and its gradient with respect to
/// `(weights, bias)`, bias last.
pub fn map_objective_and_gradient(
    model: &LinearModel,
    obs: &Observations,
    pool: &Pool,
    prior: &GaussianPrior,
) -> Result<(f64, Vec<f64>)> {
    if model.dim() != pool.dim() {
        return Err(Error::input(format!(
            "model dimension {} does not match pool dimension {}",
            model.dim(),
            pool.dim()
        )));
    }
    let dim = model.dim();
    let mut value = 0.0;
    let mut grad = vec![0.0; dim + 1];
    for &(x, y) in obs.entries() {
        let features = &pool.get(x)?.features;
        let z = model.logit(features);
        value += if y { -softplus(-z) } else { -softplus(z) };
        let resid = f64::from(u8::from(y)) - sigmoid(z);
        for (i, v) in features.iter() {
            grad[i as usize] += resid * v;
        }
        grad[dim] += resid;
    }
    let inv = 1.0 / prior.sigma2;
    let mut penalty = 0.0;
    for (i, w) in model.weights.iter().enumerate() {
        let d = w - prior.mean_weight(i);
        penalty += d * d;
        grad[i] -= d * inv;
    }
    let db = model.bias - prior.mean_bias();
    penalty += db * db;
    grad[dim] -= db * inv;
    value -= 0.5 * penalty * inv;
    Ok((value, grad))
}

/// Fitting restricted to the features that occur in the observations;
/// every other weight sits at its prior mean, where its gradient vanishes.
struct ActiveProblem<'a> {
    rows: Vec<(Vec<(usize, f64)>, bool)>,
    prior_mean: Vec<f64>,
    inv_sigma2: f64,
    fit_intercept: bool,
    prior: &'a GaussianPrior,
}

impl ActiveProblem<'_> {
    fn vars(&self) -> usize {
        self.prior_mean.len() + usize::from(self.fit_intercept)
    }

    fn bias(&self, theta: &[f64]) -> f64 {
        if self.fit_intercept {
            theta[self.prior_mean.len()]
        } else {
            self.prior.mean_bias()
        }
    }

    fn logit(&self, theta: &[f64], row: &[(usize, f64)]) -> f64 {
        row.iter().map(|&(j, v)| theta[j] * v).sum::<f64>() + self.bias(theta)
    }

    /// Negative log posterior and its gradient.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let a = self.prior_mean.len();
        let mut f = 0.0;
        let mut g = vec![0.0; theta.len()];
        for (row, y) in &self.rows {
            let z = self.logit(theta, row);
            f += if *y { softplus(-z) } else { softplus(z) };
            let resid = sigmoid(z) - f64::from(u8::from(*y));
            for &(j, v) in row {
                g[j] += resid * v;
            }
            if self.fit_intercept {
                g[a] += resid;
            }
        }
        for j in 0..a {
            let d = theta[j] - self.prior_mean[j];
            f += 0.5 * d * d * self.inv_sigma2;
            g[j] += d * self.inv_sigma2;
        }
        if self.fit_intercept {
            let d = theta[a] - self.prior.mean_bias();
            f += 0.5 * d * d * self.inv_sigma2;
            g[a] += d * self.inv_sigma2;
        }
        (f, g)
    }

    fn hessian(&self, theta: &[f64]) -> Vec<f64> {
        let n = theta.len();
        let a = self.prior_mean.len();
        let mut h = vec![0.0; n * n];
        let mut dense: Vec<(usize, f64)> = Vec::new();
        for (row, _) in &self.rows {
            let s = sigmoid(self.logit(theta, row));
            let w = s * (1.0 - s);
            dense.clear();
            dense.extend_from_slice(row);
            if self.fit_intercept {
                dense.push((a, 1.0));
            }
            for &(i, vi) in &dense {
                for &(j, vj) in &dense {
                    h[i * n + j] += w * vi * vj;
                }
            }
        }
        for i in 0..n {
            h[i * n + i] += self.inv_sigma2;
        }
        h
    }
}

/// MAP fit of a logistic model. Deterministic given the observation order,
/// the prior and the options; starts from the prior mean.
pub fn fit_map(
    obs: &Observations,
    pool: &Pool,
    prior: &GaussianPrior,
    opts: &FitOptions,
) -> Result<LinearModel> {
    let dim = pool.dim();
    let mut active: BTreeMap<u32, usize> = BTreeMap::new();
    let mut raw_rows = Vec::with_capacity(obs.len());
    for &(x, y) in obs.entries() {
        let features = &pool.get(x)?.features;
        for i in features.indices() {
            let next = active.len();
            active.entry(*i).or_insert(next);
        }
        raw_rows.push((features, y));
    }
    // Renumber in index order so the variable layout does not depend on
    // observation order.
    let order: Vec<u32> = active.keys().copied().collect();
    let local: BTreeMap<u32, usize> = order.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    let rows = raw_rows
        .into_iter()
        .map(|(f, y)| (f.iter().map(|(i, v)| (local[&i], v)).collect(), y))
        .collect();
    let problem = ActiveProblem {
        rows,
        prior_mean: order.iter().map(|&i| prior.mean_weight(i as usize)).collect(),
        inv_sigma2: 1.0 / prior.sigma2,
        fit_intercept: opts.fit_intercept,
        prior,
    };
    let mut theta0 = problem.prior_mean.clone();
    if opts.fit_intercept {
        theta0.push(prior.mean_bias());
    }
    let tol = opts.tolerance(obs.len());
    let outcome = if problem.vars() <= NEWTON_MAX_VARIABLES {
        optim::newton(theta0, tol, opts.max_iter, |t| problem.eval(t), |t| problem.hessian(t))
    } else {
        optim::lbfgs(theta0, tol, opts.max_iter, 10, |t| problem.eval(t))
    };

    let mut model = prior.mode(dim);
    for (j, &i) in order.iter().enumerate() {
        model.weights[i as usize] = outcome.x[j];
    }
    model.bias = problem.bias(&outcome.x);
    if outcome.converged {
        Ok(model)
    } else {
        Err(Error::NoConvergence {
            iterations: outcome.iterations,
            grad_norm: outcome.grad_norm,
            last: Box::new(model),
        })
    }
}

/// `(p[Y = 1; x], p[Y = 2; x])` at the MAP point.
pub fn predict_label_dist(model: &LinearModel, x: &Example) -> [f64; 2] {
    let p2 = model.prob(&x.features);
    [1.0 - p2, p2]
}

/// `r̃(x)` at the MAP point of an abstention model.
pub fn predict_abstention(model: &LinearModel, x: &Example) -> f64 {
    model.prob(&x.features)
}

/// Prior and optimizer settings for a [`MapBelief`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub label_prior: GaussianPrior,
    pub abstention_prior: GaussianPrior,
    #[serde(default)]
    pub fit: FitOptions,
}

impl MapConfig {
    pub fn isotropic(sigma2: f64) -> Result<Self> {
        Ok(MapConfig {
            label_prior: GaussianPrior::isotropic(sigma2)?,
            abstention_prior: GaussianPrior::isotropic(sigma2)?,
            fit: FitOptions::default(),
        })
    }
}

/// Binary label model and abstention model over a shared pool, refit from
/// the prior after every observation.
#[derive(Debug, Clone)]
pub struct MapBelief {
    pool: Arc<Pool>,
    config: MapConfig,
    label_obs: Observations,
    abstention_obs: Observations,
    label_model: LinearModel,
    abstention_model: LinearModel,
    label_probs: Vec<f64>,
    abstention_probs: Vec<f64>,
}

impl MapBelief {
    pub fn new(pool: Arc<Pool>, config: MapConfig) -> Result<Self> {
        if pool.alphabet() != LabelAlphabet::BINARY {
            return Err(Error::input("MAP models support binary labels only"));
        }
        let dim = pool.dim();
        let mut config = config;
        for prior in [&mut config.label_prior, &mut config.abstention_prior] {
            if let Some(mean) = prior.mean.take() {
                prior.mean = Some(mean.resized(dim)?);
            }
        }
        let label_model = config.label_prior.mode(dim);
        let abstention_model = config.abstention_prior.mode(dim);
        let mut belief = MapBelief {
            pool,
            config,
            label_obs: Observations::new(),
            abstention_obs: Observations::new(),
            label_model,
            abstention_model,
            label_probs: Vec::new(),
            abstention_probs: Vec::new(),
        };
        belief.label_probs = belief.cache(&belief.label_model);
        belief.abstention_probs = belief.cache(&belief.abstention_model);
        Ok(belief)
    }

    fn cache(&self, model: &LinearModel) -> Vec<f64> {
        self.pool.examples().iter().map(|e| model.prob(&e.features)).collect()
    }

    pub fn pool(&self) -> &Arc<Pool> {
        &self.pool
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn label_observations(&self) -> &Observations {
        &self.label_obs
    }

    pub fn abstention_observations(&self) -> &Observations {
        &self.abstention_obs
    }

    pub fn label_model(&self) -> &LinearModel {
        &self.label_model
    }

    pub fn abstention_model(&self) -> &LinearModel {
        &self.abstention_model
    }

    /// Applies one response: a label updates both models, an abstention
    /// only the abstention model.
    pub fn observe(&mut self, x: ExampleId, resp: Response) -> Result<()> {
        self.pool.get(x)?;
        match resp {
            Response::Label(y) => {
                self.pool.alphabet().check(y)?;
                let mut label_obs = self.label_obs.clone();
                label_obs.push(x, y == 2)?;
                let mut abstention_obs = self.abstention_obs.clone();
                abstention_obs.push(x, false)?;
                let label_model = fit_map(&label_obs, &self.pool, &self.config.label_prior, &self.config.fit)?;
                let abstention_model =
                    fit_map(&abstention_obs, &self.pool, &self.config.abstention_prior, &self.config.fit)?;
                self.label_probs = self.cache(&label_model);
                self.label_obs = label_obs;
                self.label_model = label_model;
                self.abstention_probs = self.cache(&abstention_model);
                self.abstention_obs = abstention_obs;
                self.abstention_model = abstention_model;
            }
            Response::Abstain => {
                let mut abstention_obs = self.abstention_obs.clone();
                abstention_obs.push(x, true)?;
                let abstention_model =
                    fit_map(&abstention_obs, &self.pool, &self.config.abstention_prior, &self.config.fit)?;
                self.abstention_probs = self.cache(&abstention_model);
                self.abstention_obs = abstention_obs;
                self.abstention_model = abstention_model;
            }
        }
        Ok(())
    }

    /// Plug-in predictive distribution for any example, in or out of the pool.
    pub fn predict(&self, x: &Example) -> [f64; 2] {
        predict_label_dist(&self.label_model, x)
    }
}

impl BeliefView for MapBelief {
    fn alphabet(&self) -> LabelAlphabet {
        LabelAlphabet::BINARY
    }
    fn label_dist(&self, x: ExampleId) -> Vec<f64> {
        let p2 = self.label_probs[x];
        vec![1.0 - p2, p2]
    }
    fn abstention(&self, x: ExampleId) -> f64 {
        self.abstention_probs[x]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_feature_pool(values: &[f64]) -> Pool {
        let feats = values.iter().map(|&v| SparseVector::new([(0, v)]).unwrap()).collect();
        Pool::new(feats, LabelAlphabet::BINARY)
    }

    fn random_pool(rng: &mut ChaCha8Rng, n: usize, dim: u32) -> Pool {
        let feats = (0..n)
            .map(|_| {
                let mut pairs = Vec::new();
                for i in 0..dim {
                    if rng.gen_bool(0.5) {
                        pairs.push((i, rng.gen_range(-2.0..2.0)));
                    }
                }
                SparseVector::new(pairs).unwrap()
            })
            .collect();
        Pool::with_dim(feats, LabelAlphabet::BINARY, dim as usize)
    }

    /// Root of `1 − sigmoid(w) = w` by bisection.
    fn stationary_weight() -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - sigmoid(mid) - mid > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn prior_mode_at_origin() {
        let pool = one_feature_pool(&[1.0]);
        let prior = GaussianPrior::isotropic(1.0).unwrap();
        let (v, g) =
            map_objective_and_gradient(&LinearModel::zeros(1, 1.0), &Observations::new(), &pool, &prior).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let m = fit_map(&Observations::new(), &pool, &prior, &FitOptions::default()).unwrap();
        assert_eq!(m.weights, vec![0.0]);
        assert_eq!(m.bias, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let pool = one_feature_pool(&[1.0]);
        let prior = GaussianPrior::isotropic(1.0).unwrap();
        assert!(map_objective_and_gradient(&LinearModel::zeros(3, 1.0), &Observations::new(), &pool, &prior).is_err());
    }

    #[test]
    fn single_observation_matches_root_finding() {
        let w_star = stationary_weight();
        assert_abs_diff_eq!(w_star, 0.401, epsilon = 1e-3);
        let pool = one_feature_pool(&[1.0]);
        let obs = Observations::from_entries(vec![(0, true)]).unwrap();
        let opts = FitOptions { fit_intercept: false, ..FitOptions::default() };
        let m = fit_map(&obs, &pool, &GaussianPrior::isotropic(1.0).unwrap(), &opts).unwrap();
        assert_abs_diff_eq!(m.weights[0], w_star, epsilon = 1e-4);
        assert_eq!(m.bias, 0.0);
    }

    #[test]
    fn symmetric_data_gives_zero_model() {
        let pool = one_feature_pool(&[1.5, 1.5]);
        let obs = Observations::from_entries(vec![(0, true), (1, false)]).unwrap();
        let m = fit_map(&obs, &pool, &GaussianPrior::isotropic(1.0).unwrap(), &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(m.weights[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.bias, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let pool = one_feature_pool(&[1.0, 2.0]);
        let obs = Observations::from_entries(vec![(0, true), (1, false)]).unwrap();
        let opts = FitOptions { tol: Some(1e-30), max_iter: 2, fit_intercept: true };
        match fit_map(&obs, &pool, &GaussianPrior::isotropic(1.0).unwrap(), &opts) {
            Err(Error::NoConvergence { last, .. }) => assert_eq!(last.dim(), 1),
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn prediction_examples() {
        let ex = Example { id: 0, features: SparseVector::new([(2, 1.0)]).unwrap() };
        assert_eq!(predict_label_dist(&LinearModel::zeros(3, 1.0), &ex), [0.5, 0.5]);
        let m = LinearModel { weights: vec![0.0, 0.0, 9f64.ln()], bias: 0.0, sigma2: 1.0 };
        let [p1, p2] = predict_label_dist(&m, &ex);
        assert_abs_diff_eq!(p2, 0.9, epsilon = 1e-15);
        assert_eq!(p1 + p2, 1.0);
        let big = LinearModel { weights: vec![0.0, 0.0, 40.0], bias: 5.0, sigma2: 1.0 };
        let [p1, p2] = predict_label_dist(&big, &ex);
        assert!((1.0 - p2) < 1e-12 && p1.is_finite() && p1 >= 0.0);
        let huge = LinearModel { weights: vec![0.0, 0.0, -1e6], bias: 0.0, sigma2: 1.0 };
        assert_eq!(predict_abstention(&huge, &ex), 0.0);
        assert_eq!(predict_abstention(&LinearModel::zeros(3, 1.0), &ex), 0.5);
    }

    #[test]
    fn all_abstain_history_raises_abstention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = Arc::new(random_pool(&mut rng, 20, 5));
        let mut belief = MapBelief::new(pool.clone(), MapConfig::isotropic(1.0).unwrap()).unwrap();
        for x in 0..20 {
            belief.observe(x, Response::Abstain).unwrap();
        }
        assert!(belief.label_observations().is_empty());
        for x in 0..20 {
            assert!(belief.abstention(x) > 0.5);
        }
    }

    #[test]
    fn label_and_abstain_branches_touch_different_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pool = Arc::new(random_pool(&mut rng, 6, 4));
        let mut belief = MapBelief::new(pool, MapConfig::isotropic(1.0).unwrap()).unwrap();
        belief.observe(0, Response::Label(2)).unwrap();
        assert_eq!(belief.label_observations().entries(), &[(0, true)]);
        assert_eq!(belief.abstention_observations().entries(), &[(0, false)]);
        let before = belief.label_model().clone();
        belief.observe(1, Response::Abstain).unwrap();
        assert_eq!(belief.label_observations().entries(), &[(0, true)]);
        assert_eq!(belief.abstention_observations().entries(), &[(0, false), (1, true)]);
        assert_eq!(belief.label_model(), &before);
        assert!(belief.observe(1, Response::Label(1)).is_err());
        assert!(belief.observe(2, Response::Label(3)).is_err());
    }

    #[test]
    fn checkpoint_json_is_sparse() {
        let m = LinearModel { weights: vec![0.0, 1.5, 0.0, -2.0], bias: 0.25, sigma2: 0.5 };
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"sigma2":0.5,"bias":0.25,"weights":[[1,1.5],[3,-2.0]]}"#);
        let back: LinearModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.resized(6).unwrap().dim(), 6);
    }

    #[test]
    fn centered_prior_pulls_toward_checkpoint() {
        let pool = Arc::new(one_feature_pool(&[1.0, 1.0]));
        let checkpoint = LinearModel { weights: vec![2.0], bias: -1.0, sigma2: 1.0 };
        let config = MapConfig {
            label_prior: GaussianPrior::isotropic(1.0).unwrap(),
            abstention_prior: GaussianPrior::centered_at(checkpoint.clone()),
            fit: FitOptions::default(),
        };
        let belief = MapBelief::new(pool, config).unwrap();
        assert_abs_diff_eq!(belief.abstention(0), sigmoid(1.0), epsilon = 1e-15);
    }

    fn random_instance(seed: u64) -> (Pool, Observations, GaussianPrior, LinearModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(1..6);
        let n = rng.gen_range(1..15);
        let pool = random_pool(&mut rng, n, dim);
        let obs = Observations::from_entries((0..n).map(|x| (x, rng.gen_bool(0.5))).collect()).unwrap();
        let prior = GaussianPrior::isotropic(rng.gen_range(0.1..3.0)).unwrap();
        let model = LinearModel {
            weights: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            bias: rng.gen_range(-2.0..2.0),
            sigma2: prior.sigma2,
        };
        (pool, obs, prior, model)
    }

    fn eval_at(pool: &Pool, obs: &Observations, prior: &GaussianPrior, theta: &[f64]) -> f64 {
        let dim = theta.len() - 1;
        let m = LinearModel { weights: theta[..dim].to_vec(), bias: theta[dim], sigma2: prior.sigma2 };
        map_objective_and_gradient(&m, obs, pool, prior).unwrap().0
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        for seed in 0..120 {
            let (pool, obs, prior, model) = random_instance(seed);
            let (_, grad) = map_objective_and_gradient(&model, &obs, &pool, &prior).unwrap();
            let mut theta = model.weights.clone();
            theta.push(model.bias);
            for i in 0..theta.len() {
                let mut up = theta.clone();
                up[i] += h;
                let mut down = theta.clone();
                down[i] -= h;
                let fd = (eval_at(&pool, &obs, &prior, &up) - eval_at(&pool, &obs, &prior, &down)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / grad[i].abs().max(1.0);
                assert!(rel < 1e-5, "seed {seed} coord {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn fit_reaches_tolerance_and_is_deterministic() {
        for seed in 0..40 {
            let (pool, obs, prior, _) = random_instance(seed);
            let opts = FitOptions::default();
            let a = fit_map(&obs, &pool, &prior, &opts).unwrap();
            let b = fit_map(&obs, &pool, &prior, &opts).unwrap();
            assert_eq!(a, b);
            let (_, g) = map_objective_and_gradient(&a, &obs, &pool, &prior).unwrap();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= opts.tolerance(obs.len()) * 1.0001, "seed {seed}: {norm}");
        }
    }

    #[test]
    fn lbfgs_and_newton_agree_on_wide_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pool = random_pool(&mut rng, 40, 700);
        let obs = Observations::from_entries((0..40).map(|x| (x, rng.gen_bool(0.5))).collect()).unwrap();
        let prior = GaussianPrior::isotropic(1.0).unwrap();
        let wide = fit_map(&obs, &pool, &prior, &FitOptions::default()).unwrap();
        let (_, g) = map_objective_and_gradient(&wide, &obs, &pool, &prior).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8 * 40.0 * 1.0001);
    }

    proptest! {
        #[test]
        fn objective_is_concave_along_segments(seed in 0u64..10_000, t in 0.0f64..1.0) {
            let (pool, obs, prior, a) = random_instance(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
            let mut ta: Vec<f64> = a.weights.clone();
            ta.push(a.bias);
            let tb: Vec<f64> = ta.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mid: Vec<f64> = ta.iter().zip(&tb).map(|(u, v)| t * u + (1.0 - t) * v).collect();
            let fa = eval_at(&pool, &obs, &prior, &ta);
            let fb = eval_at(&pool, &obs, &prior, &tb);
            let fm = eval_at(&pool, &obs, &prior, &mid);
            prop_assert!(fm >= t * fa + (1.0 - t) * fb - 1e-10);
        }
    }
}
