//! Shared domain types: pools, labelings, abstention patterns, responses and
//! session traces.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Index of an example in its pool.
pub type ExampleId = usize;

/// The label set `{1, ..., size}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct LabelAlphabet(u32);

impl LabelAlphabet {
    pub const BINARY: LabelAlphabet = LabelAlphabet(2);

    pub fn new(size: u32) -> Result<Self> {
        if size < 2 {
            return Err(Error::input(format!("label alphabet needs at least 2 labels, got {size}")));
        }
        Ok(LabelAlphabet(size))
    }

    pub fn size(self) -> usize {
        self.0 as usize
    }

    pub fn contains(self, label: u32) -> bool {
        (1..=self.0).contains(&label)
    }

    pub fn labels(self) -> impl Iterator<Item = u32> {
        1..=self.0
    }

    pub fn check(self, label: u32) -> Result<u32> {
        if self.contains(label) {
            Ok(label)
        } else {
            Err(Error::input(format!("label {label} outside alphabet 1..={}", self.0)))
        }
    }
}

impl TryFrom<u32> for LabelAlphabet {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        LabelAlphabet::new(v)
    }
}

impl From<LabelAlphabet> for u32 {
    fn from(a: LabelAlphabet) -> u32 {
        a.0
    }
}

/// Outcome of one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Response {
    Label(u32),
    Abstain,
}

impl Response {
    /// Wire encoding used in trace files: 0 for abstain, the label otherwise.
    pub fn code(self) -> u32 {
        match self {
            Response::Label(y) => y,
            Response::Abstain => 0,
        }
    }

    pub fn from_code(code: u32) -> Self {
        if code == 0 {
            Response::Abstain
        } else {
            Response::Label(code)
        }
    }

    pub fn is_abstain(self) -> bool {
        matches!(self, Response::Abstain)
    }

    /// Child slot in a policy tree: 0 for abstain, `y` for label `y`.
    pub fn branch(self) -> usize {
        self.code() as usize
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Label(y) => write!(f, "label {y}"),
            Response::Abstain => f.write_str("abstain"),
        }
    }
}

impl Serialize for Response {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u32(self.code())
    }
}

impl<'de> Deserialize<'de> for Response {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        u32::deserialize(d).map(Response::from_code)
    }
}

/// Sparse feature vector stored as `(index, value)` pairs sorted by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from pairs that must already be strictly increasing in
    /// index. Explicit zeros are dropped.
    pub fn new(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, v) in pairs {
            if !v.is_finite() {
                return Err(Error::input(format!("non-finite feature value at index {i}")));
            }
            if let Some(&last) = indices.last() {
                if i <= last {
                    return Err(Error::input(format!("non-increasing index {i} after {last}")));
                }
            }
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(SparseVector { indices, values })
    }

    pub fn empty() -> Self {
        SparseVector::default()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// One past the largest index, or 0 for the empty vector.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter()
            .map(|(i, v)| dense.get(i as usize).copied().unwrap_or(0.0) * v)
            .sum()
    }
}

impl Serialize for SparseVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for SparseVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<(u32, f64)>::deserialize(d)?;
        SparseVector::new(pairs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: ExampleId,
    pub features: SparseVector,
}

/// A fixed, finite collection of unlabeled examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    examples: Vec<Example>,
    alphabet: LabelAlphabet,
    dim: usize,
}

impl Pool {
    /// Assigns ids `0..n` in the given order.
    pub fn new(features: Vec<SparseVector>, alphabet: LabelAlphabet) -> Self {
        let dim = features.iter().map(SparseVector::min_dim).max().unwrap_or(0);
        Self::with_dim(features, alphabet, dim)
    }

    /// Like [`Pool::new`] but with an explicit dimensionality, which must
    /// cover every feature index.
    pub fn with_dim(features: Vec<SparseVector>, alphabet: LabelAlphabet, dim: usize) -> Self {
        let dim = features.iter().map(SparseVector::min_dim).fold(dim, usize::max);
        let examples = features
            .into_iter()
            .enumerate()
            .map(|(id, features)| Example { id, features })
            .collect();
        Pool { examples, alphabet, dim }
    }

    /// A pool of featureless examples, for the exact path where hypotheses
    /// are indexed by id alone.
    pub fn featureless(n: usize, alphabet: LabelAlphabet) -> Self {
        Pool::new(vec![SparseVector::empty(); n], alphabet)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn alphabet(&self) -> LabelAlphabet {
        self.alphabet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, x: ExampleId) -> Result<&Example> {
        self.examples.get(x).ok_or(Error::UnknownExample(x))
    }

    pub fn ids(&self) -> std::ops::Range<ExampleId> {
        0..self.examples.len()
    }
}

/// A total assignment of labels to pool ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labeling(Vec<u32>);

impl Labeling {
    pub fn new(labels: Vec<u32>, alphabet: LabelAlphabet) -> Result<Self> {
        for &y in &labels {
            alphabet.check(y)?;
        }
        Ok(Labeling(labels))
    }

    pub fn get(&self, x: ExampleId) -> Result<u32> {
        self.0.get(x).copied().ok_or(Error::UnknownExample(x))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// A total 0/1 assignment over pool ids; `true` means the labeler abstains.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbstentionPattern(Vec<bool>);

impl AbstentionPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        AbstentionPattern(bits)
    }

    pub fn none(n: usize) -> Self {
        AbstentionPattern(vec![false; n])
    }

    pub fn get(&self, x: ExampleId) -> Result<bool> {
        self.0.get(x).copied().ok_or(Error::UnknownExample(x))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// `f(S)` in the order of `S`.
pub fn restrict(f: &Labeling, ids: &[ExampleId]) -> Result<Vec<u32>> {
    ids.iter().map(|&x| f.get(x)).collect()
}

/// What a labeler following `(f, k)` answers when asked about `x`.
pub fn response_of(f: &Labeling, k: &AbstentionPattern, x: ExampleId) -> Result<Response> {
    let label = f.get(x)?;
    Ok(if k.get(x)? {
        Response::Abstain
    } else {
        Response::Label(label)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub x: ExampleId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub x: ExampleId,
    pub response: Response,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<ScoreEntry>,
}

/// The realized query/response sequence of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub budget: usize,
    pub seed: u64,
    pub steps: Vec<TraceStep>,
    /// Set when the pool ran out before the budget did.
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    t: usize,
    x: ExampleId,
    y: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<ScoreEntry>>,
}

impl SessionTrace {
    pub fn new(budget: usize, seed: u64) -> Self {
        SessionTrace { budget, seed, steps: Vec::new(), truncated: false }
    }

    pub fn queried(&self) -> impl Iterator<Item = ExampleId> + '_ {
        self.steps.iter().map(|s| s.x)
    }

    /// One `{"t", "x", "y"}` object per line, `y = 0` for abstain.
    pub fn write_jsonl<W: Write>(&self, mut w: W, with_scores: bool) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            let line = TraceLine {
                t: i + 1,
                x: step.x,
                y: step.response.code(),
                scores: (with_scores && !step.scores.is_empty()).then(|| step.scores.clone()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads the steps back. Budget and seed are not part of the line format
    /// and must be supplied.
    pub fn read_jsonl<R: BufRead>(r: R, budget: usize, seed: u64) -> Result<Self> {
        let mut trace = SessionTrace::new(budget, seed);
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            if parsed.t != trace.steps.len() + 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected step {}, found {}", trace.steps.len() + 1, parsed.t),
                });
            }
            trace.steps.push(TraceStep {
                x: parsed.x,
                response: Response::from_code(parsed.y),
                scores: parsed.scores.unwrap_or_default(),
            });
        }
        Ok(trace)
    }
}
