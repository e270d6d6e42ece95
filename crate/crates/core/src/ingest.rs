//! Datasets: svmlight text, `0/1` abstention sidecars, and a synthetic
//! bag-of-words generator.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Example, LabelAlphabet, Pool, SparseVector};

/// Binary labeled sparse data. Labels are always in `{1, 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<SparseVector>,
    pub labels: Vec<u32>,
    pub dim: usize,
    /// Generating class of each row when known; classes `0` and `1` are the
    /// target classes, higher ones are unrelated to the task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_class: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(features: Vec<SparseVector>, labels: Vec<u32>, dim: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::input("one label per row required"));
        }
        if let Some(&y) = labels.iter().find(|&&y| !LabelAlphabet::BINARY.contains(y)) {
            return Err(Error::input(format!("label {y} outside {{1, 2}}")));
        }
        let dim = features.iter().map(SparseVector::min_dim).fold(dim, usize::max);
        Ok(Dataset { features, labels, dim, source_class: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            source_class: self.source_class.as_ref().map(|c| rows.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Splits rows into target-class rows and unrelated-class rows. Without
    /// source metadata every row is a target row.
    pub fn split_by_source(&self) -> (Dataset, Dataset) {
        let (target, other): (Vec<usize>, Vec<usize>) = match &self.source_class {
            Some(c) => (0..self.len()).partition(|&i| c[i] < 2),
            None => ((0..self.len()).collect(), Vec::new()),
        };
        (self.subset(&target), self.subset(&other))
    }

    pub fn pool(&self) -> Pool {
        Pool::with_dim(self.features.clone(), LabelAlphabet::BINARY, self.dim)
    }

    /// Rows as examples with ids `0..n`, e.g. for a test set.
    pub fn examples(&self) -> Vec<Example> {
        self.features.iter().cloned().enumerate().map(|(id, features)| Example { id, features }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Convention {
    /// `−1 → 1`, `+1 → 2`
    PlusMinus,
    /// `0 → 1`, `1 → 2`
    ZeroOne,
    /// kept as is
    OneTwo,
}

impl Convention {
    const ALL: [Convention; 3] = [Convention::PlusMinus, Convention::ZeroOne, Convention::OneTwo];

    fn map(self, raw: i64) -> Option<u32> {
        match (self, raw) {
            (Convention::PlusMinus, -1) | (Convention::ZeroOne, 0) | (Convention::OneTwo, 1) => Some(1),
            (Convention::PlusMinus, 1) | (Convention::ZeroOne, 1) | (Convention::OneTwo, 2) => Some(2),
            _ => None,
        }
    }
}

fn parse_label(token: &str) -> Option<i64> {
    let v: f64 = token.parse().ok()?;
    (v.fract() == 0.0 && v.abs() < 1e9).then_some(v as i64)
}

/// Parses svmlight text. The label convention (`{−1, +1}`, `{0, 1}` or
/// `{1, 2}`) is resolved over the whole file; a file whose labels fit more
/// than one convention takes the first of that order, so a file of only
/// `1`s is all label 2. `#` starts a comment.
pub fn parse_svmlight(text: &str) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut features = Vec::new();
    let mut candidates = Convention::ALL.to_vec();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| Error::Parse { line: lineno, message };
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line");
        let label = parse_label(label_tok).ok_or_else(|| err(format!("malformed label '{label_tok}'")))?;
        candidates.retain(|c| c.map(label).is_some());
        if candidates.is_empty() {
            return Err(err(format!("label {label} mixes label conventions")));
        }
        let mut pairs = Vec::new();
        let mut last: Option<u32> = None;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("malformed token '{tok}'")))?;
            let idx: u32 = idx.parse().map_err(|_| err(format!("malformed index in '{tok}'")))?;
            let val: f64 = val.parse().map_err(|_| err(format!("malformed value in '{tok}'")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite value in '{tok}'")));
            }
            if last.is_some_and(|l| idx <= l) {
                return Err(err(format!("non-increasing index {idx}")));
            }
            last = Some(idx);
            pairs.push((idx, val));
        }
        features.push(SparseVector::new(pairs).map_err(|e| err(e.to_string()))?);
        raw_labels.push(label);
    }
    let convention = candidates[0];
    let labels = raw_labels.into_iter().map(|l| convention.map(l).expect("checked per line")).collect();
    Dataset::new(features, labels, 0)
}

/// Renders in the `{−1, +1}` convention, which parses back to the same
/// labels whatever the label mix.
pub fn render_svmlight(data: &Dataset) -> String {
    let mut out = String::new();
    for (features, &label) in data.features.iter().zip(&data.labels) {
        out.push_str(if label == 2 { "+1" } else { "-1" });
        for (i, v) in features.iter() {
            let _ = write!(out, " {i}:{v}");
        }
        out.push('\n');
    }
    out
}

/// One `0` or `1` per nonempty line.
pub fn parse_abstention_sidecar(text: &str) -> Result<Vec<bool>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Parse { line: i + 1, message: format!("expected 0 or 1, found '{other}'") }),
        })
        .collect()
}

pub fn render_abstention_sidecar(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { "1\n" } else { "0\n" }).collect()
}

/// Parameters of [`synth_text_like`].
///
/// The vocabulary is cut into equal blocks: one per target class, one per
/// unrelated class, and a shared block. A document of class `c` draws each
/// word from block `c` with its own purity and from the shared block
/// otherwise. Purity is uniform on `separation ± spread`, where
/// `spread = min(separation, 1 − separation)`, so documents range from
/// ambiguous to clear-cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Rows drawn from the two target classes.
    pub n: usize,
    /// Rows drawn from the unrelated classes, spread evenly.
    #[serde(default)]
    pub n_redundant: usize,
    pub dims: usize,
    pub separation: f64,
    #[serde(default)]
    pub redundant_classes: usize,
    /// Mean words per document; lengths are uniform on `[mean/2, 3·mean/2]`.
    #[serde(default = "default_doc_length")]
    pub doc_length: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_doc_length() -> usize {
    12
}

/// Synthetic binary bag-of-words data; see [`SynthSpec`].
pub fn synth_text_like(spec: &SynthSpec) -> Result<Dataset> {
    let blocks = 3 + spec.redundant_classes;
    if spec.dims < 2 || spec.dims < blocks {
        return Err(Error::input(format!("need at least {} dimensions", blocks.max(2))));
    }
    if !(0.0..=1.0).contains(&spec.separation) {
        return Err(Error::input("separation must lie in [0, 1]"));
    }
    if spec.n_redundant > 0 && spec.redundant_classes == 0 {
        return Err(Error::input("unrelated rows requested without unrelated classes"));
    }
    if spec.doc_length == 0 {
        return Err(Error::input("doc_length must be positive"));
    }
    let block = spec.dims / blocks;
    let shared = (blocks - 1) * block..spec.dims;
    let spread = spec.separation.min(1.0 - spec.separation);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut classes: Vec<u32> = (0..spec.n).map(|i| (i % 2) as u32).collect();
    classes.extend((0..spec.n_redundant).map(|i| 2 + (i % spec.redundant_classes.max(1)) as u32));
    classes.shuffle(&mut rng);

    let lo = (spec.doc_length / 2).max(1);
    let hi = (3 * spec.doc_length / 2).max(lo);
    let mut features = Vec::with_capacity(classes.len());
    let mut labels = Vec::with_capacity(classes.len());
    for &c in &classes {
        let purity = if spread > 0.0 {
            rng.gen_range(spec.separation - spread..=spec.separation + spread)
        } else {
            spec.separation
        };
        let own = c as usize * block..(c as usize + 1) * block;
        let mut counts = vec![0.0; spec.dims];
        for _ in 0..rng.gen_range(lo..=hi) {
            let range = if rng.gen_bool(purity.clamp(0.0, 1.0)) { own.clone() } else { shared.clone() };
            counts[rng.gen_range(range)] += 1.0;
        }
        features.push(SparseVector::new(counts.into_iter().enumerate().map(|(i, v)| (i as u32, v)))?);
        labels.push(1 + c % 2);
    }
    let mut data = Dataset::new(features, labels, spec.dims)?;
    data.source_class = Some(classes);
    Ok(data)
}
