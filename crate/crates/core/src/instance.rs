//! Problem instances: an explicit hypothesis table over a finite example
//! space, plus a finite-support joint distribution over labeled examples.
//!
//! Keeping the distribution explicit makes every expectation in the
//! stack an exact finite sum, so losses, gradients and estimator moments
//! can all be checked without sampling. Generators are pure functions of
//! their seed and instances round-trip through a JSON file format.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, RngStream};
use crate::scalar::Real;

/// A class label in `[0, K)`. Labels are 0-indexed everywhere, including
/// the instance file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A labeled example drawn from (or matching) the instance support.
pub type Sample = (usize, Label);

/// An explicit finite hypothesis class: row `h`, column `x` holds `h(x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisClass {
    num_hypotheses: usize,
    num_examples: usize,
    labels: Vec<Label>,
}

impl HypothesisClass {
    /// Build a class from one row per hypothesis. Rows must be nonempty
    /// and rectangular.
    pub fn from_rows(rows: Vec<Vec<Label>>) -> Result<Self, InstanceError> {
        if rows.is_empty() {
            return Err(InstanceError::InvalidParameter {
                name: "rows",
                message: "hypothesis class must contain at least one hypothesis".into(),
            });
        }
        let num_examples = rows[0].len();
        if num_examples == 0 {
            return Err(InstanceError::InvalidParameter {
                name: "rows",
                message: "hypothesis class must cover at least one example".into(),
            });
        }
        let num_hypotheses = rows.len();
        let mut labels = Vec::with_capacity(num_hypotheses * num_examples);
        for (row_idx, row) in rows.into_iter().enumerate() {
            if row.len() != num_examples {
                return Err(InstanceError::RaggedTable {
                    row: row_idx,
                    got: row.len(),
                    expected: num_examples,
                });
            }
            labels.extend(row);
        }
        Ok(Self { num_hypotheses, num_examples, labels })
    }

    pub fn num_hypotheses(&self) -> usize {
        self.num_hypotheses
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    /// `h(x)`. Panics if either index is out of range.
    #[inline]
    pub fn label(&self, h: usize, x: usize) -> Label {
        assert!(h < self.num_hypotheses, "hypothesis index {h} out of range");
        assert!(x < self.num_examples, "example index {x} out of range");
        self.labels[h * self.num_examples + x]
    }

    /// The full label row of hypothesis `h`.
    pub fn row(&self, h: usize) -> &[Label] {
        assert!(h < self.num_hypotheses, "hypothesis index {h} out of range");
        &self.labels[h * self.num_examples..(h + 1) * self.num_examples]
    }

    /// A new class containing only the given rows, in the given order.
    pub fn restrict(&self, rows: &[usize]) -> Self {
        assert!(!rows.is_empty(), "restricted class must keep at least one hypothesis");
        let mut labels = Vec::with_capacity(rows.len() * self.num_examples);
        for &h in rows {
            labels.extend_from_slice(self.row(h));
        }
        Self { num_hypotheses: rows.len(), num_examples: self.num_examples, labels }
    }

    /// Largest label value appearing in the table.
    pub fn max_label(&self) -> u32 {
        self.labels.iter().map(|l| l.0).max().unwrap_or(0)
    }
}

/// One atom of the joint distribution over `(example, label)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportPoint<F> {
    pub example: usize,
    pub label: Label,
    pub probability: F,
}

/// A complete problem instance: label count, hypothesis table and the
/// exact joint distribution the environment samples from.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<F> {
    pub num_labels: u32,
    pub class: HypothesisClass,
    pub support: Vec<SupportPoint<F>>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("hypothesis table is ragged: row {row} has {got} columns, expected {expected}")]
    RaggedTable { row: usize, got: usize, expected: usize },
    #[error("instance failed validation:\n  {}", issues.join("\n  "))]
    Invalid { issues: Vec<String> },
}

#[derive(Debug, Error)]
pub enum InstanceLoadError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] InstanceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl<F: Real> Instance<F> {
    /// Expected zero-one loss of hypothesis `h`, as an exact finite sum.
    pub fn hypothesis_loss(&self, h: usize) -> F {
        assert!(h < self.class.num_hypotheses(), "hypothesis index {h} out of range");
        let mut loss = F::zero();
        for point in &self.support {
            if self.class.label(h, point.example) != point.label {
                loss += point.probability;
            }
        }
        loss
    }

    /// The minimizer of the expected loss over the whole class, with its
    /// loss. Ties break to the lowest index.
    pub fn best_hypothesis(&self) -> (usize, F) {
        let mut best = (0, self.hypothesis_loss(0));
        for h in 1..self.class.num_hypotheses() {
            let loss = self.hypothesis_loss(h);
            if loss < best.1 {
                best = (h, loss);
            }
        }
        best
    }

    /// All invariant violations, empty when the instance is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.num_labels == 0 {
            issues.push("label count K must be at least 1".into());
        }
        for h in 0..self.class.num_hypotheses() {
            for x in 0..self.class.num_examples() {
                let value = self.class.label(h, x).0;
                if value >= self.num_labels {
                    issues.push(format!(
                        "hypothesis {h}, example {x}: label out of range ({value} >= K={})",
                        self.num_labels
                    ));
                }
            }
        }
        if self.support.is_empty() {
            issues.push("support must be nonempty".into());
        }
        let mut seen = BTreeSet::new();
        let mut total = F::zero();
        for (i, point) in self.support.iter().enumerate() {
            if point.example >= self.class.num_examples() {
                issues.push(format!(
                    "support[{i}]: example index {} out of range (m={})",
                    point.example,
                    self.class.num_examples()
                ));
            }
            if point.label.0 >= self.num_labels {
                issues.push(format!(
                    "support[{i}]: label out of range ({} >= K={})",
                    point.label.0, self.num_labels
                ));
            }
            if !(point.probability > F::zero()) || !point.probability.is_finite() {
                issues.push(format!(
                    "support[{i}]: probability must be strictly positive and finite, got {}",
                    point.probability
                ));
            }
            if !seen.insert((point.example, point.label)) {
                issues.push(format!(
                    "support[{i}]: duplicate pair (x={}, y={})",
                    point.example, point.label
                ));
            }
            total += point.probability;
        }
        if !self.support.is_empty() && (total - F::one()).abs() > F::strict_tol() {
            issues.push(format!("support not normalized (sum = {total})"));
        }
        issues
    }

    /// Validating constructor wrapper.
    pub fn validated(self) -> Result<Self, InstanceError> {
        let issues = self.validate();
        if issues.is_empty() {
            Ok(self)
        } else {
            Err(InstanceError::Invalid { issues })
        }
    }

    pub fn to_json_string(&self) -> String {
        let file = InstanceFile {
            k: self.num_labels,
            m: self.class.num_examples(),
            hypotheses: (0..self.class.num_hypotheses())
                .map(|h| self.class.row(h).iter().map(|l| l.0).collect())
                .collect(),
            support: self
                .support
                .iter()
                .map(|p| SupportFileEntry { x: p.example, y: p.label.0, p: p.probability.as_f64() })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    /// Parse and validate an instance from its JSON form. Parse errors
    /// report the offending line and column; semantic errors list every
    /// violated invariant.
    pub fn from_json_str(text: &str) -> Result<Self, InstanceLoadError> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| InstanceLoadError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let rows = file
            .hypotheses
            .into_iter()
            .map(|row| row.into_iter().map(Label).collect())
            .collect();
        let class = HypothesisClass::from_rows(rows)?;
        if class.num_examples() != file.m {
            return Err(InstanceError::InvalidParameter {
                name: "m",
                message: format!(
                    "declared m={} does not match table width {}",
                    file.m,
                    class.num_examples()
                ),
            }
            .into());
        }
        let support = file
            .support
            .into_iter()
            .map(|e| SupportPoint { example: e.x, label: Label(e.y), probability: F::from_f64(e.p) })
            .collect();
        let instance = Instance { num_labels: file.k, class, support };
        Ok(instance.validated()?)
    }

    pub fn write_json_file(&self, path: &Path) -> Result<(), InstanceLoadError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn read_json_file(path: &Path) -> Result<Self, InstanceLoadError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    #[serde(rename = "K")]
    k: u32,
    m: usize,
    hypotheses: Vec<Vec<u32>>,
    support: Vec<SupportFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct SupportFileEntry {
    x: usize,
    y: u32,
    p: f64,
}

fn check_generator_params(
    num_examples: usize,
    num_labels: u32,
    num_hypotheses: usize,
) -> Result<(), InstanceError> {
    if num_examples == 0 {
        return Err(InstanceError::InvalidParameter {
            name: "num_examples",
            message: "must be at least 1".into(),
        });
    }
    if num_labels < 2 {
        return Err(InstanceError::InvalidParameter {
            name: "num_labels",
            message: "must be at least 2".into(),
        });
    }
    if num_hypotheses == 0 {
        return Err(InstanceError::InvalidParameter {
            name: "num_hypotheses",
            message: "must be at least 1".into(),
        });
    }
    Ok(())
}

/// A planted instance: examples are uniform over `[0, m)`, hypothesis 0's
/// label is correct with probability `1 - noise` per example and the
/// noise mass is spread evenly over the wrong labels, so hypothesis 0 has
/// expected loss exactly `noise`. All other table rows are uniformly
/// random. Deterministic in `seed`.
pub fn make_planted_instance<F: Real>(
    num_examples: usize,
    num_labels: u32,
    num_hypotheses: usize,
    noise: f64,
    seed: u64,
) -> Result<Instance<F>, InstanceError> {
    check_generator_params(num_examples, num_labels, num_hypotheses)?;
    if !(0.0..1.0).contains(&noise) {
        return Err(InstanceError::InvalidParameter {
            name: "noise",
            message: format!("must lie in [0, 1), got {noise}"),
        });
    }
    let mut rng = stream_rng(seed, RngStream::Generator);
    let rows: Vec<Vec<Label>> = (0..num_hypotheses)
        .map(|_| (0..num_examples).map(|_| Label(rng.gen_range(0..num_labels))).collect())
        .collect();
    let class = HypothesisClass::from_rows(rows)?;

    let example_mass = F::from_f64(1.0 / num_examples as f64);
    let correct_mass = example_mass * F::from_f64(1.0 - noise);
    let wrong_mass = F::from_f64(noise / ((num_labels - 1) as f64 * num_examples as f64));
    let mut support = Vec::new();
    for x in 0..num_examples {
        let planted = class.label(0, x);
        support.push(SupportPoint { example: x, label: planted, probability: correct_mass });
        if noise > 0.0 {
            for y in 0..num_labels {
                if y != planted.0 {
                    support.push(SupportPoint {
                        example: x,
                        label: Label(y),
                        probability: wrong_mass,
                    });
                }
            }
        }
    }
    Instance { num_labels, class, support }.validated()
}

/// A random instance whose support probabilities are small-denominator
/// rationals (integer weights in `1..=9` over the full `(x, y)` grid,
/// normalized), so the support tiles exactly into finite datasets.
/// Deterministic in `seed`.
pub fn make_rational_instance<F: Real>(
    num_examples: usize,
    num_labels: u32,
    num_hypotheses: usize,
    seed: u64,
) -> Result<Instance<F>, InstanceError> {
    check_generator_params(num_examples, num_labels, num_hypotheses)?;
    let mut rng = stream_rng(seed, RngStream::Generator);
    let rows: Vec<Vec<Label>> = (0..num_hypotheses)
        .map(|_| (0..num_examples).map(|_| Label(rng.gen_range(0..num_labels))).collect())
        .collect();
    let class = HypothesisClass::from_rows(rows)?;

    let weights: Vec<u32> =
        (0..num_examples * num_labels as usize).map(|_| rng.gen_range(1..=9)).collect();
    let total: u32 = weights.iter().sum();
    let mut support = Vec::with_capacity(weights.len());
    let mut idx = 0;
    for x in 0..num_examples {
        for y in 0..num_labels {
            support.push(SupportPoint {
                example: x,
                label: Label(y),
                probability: F::from_f64(f64::from(weights[idx]) / f64::from(total)),
            });
            idx += 1;
        }
    }
    Instance { num_labels, class, support }.validated()
}

/// A fully random instance: uniformly random table, support over the full
/// `(x, y)` grid with normalized exponential weights. Deterministic in
/// `seed`.
pub fn make_random_instance<F: Real>(
    num_examples: usize,
    num_labels: u32,
    num_hypotheses: usize,
    seed: u64,
) -> Result<Instance<F>, InstanceError> {
    check_generator_params(num_examples, num_labels, num_hypotheses)?;
    let mut rng = stream_rng(seed, RngStream::Generator);
    let rows: Vec<Vec<Label>> = (0..num_hypotheses)
        .map(|_| (0..num_examples).map(|_| Label(rng.gen_range(0..num_labels))).collect())
        .collect();
    let class = HypothesisClass::from_rows(rows)?;

    let mut raw = Vec::with_capacity(num_examples * num_labels as usize);
    for x in 0..num_examples {
        for y in 0..num_labels {
            let u: f64 = rng.gen();
            raw.push((x, Label(y), -(1.0 - u).ln()));
        }
    }
    let total: f64 = raw.iter().map(|(_, _, w)| w).sum();
    let support = raw
        .into_iter()
        .map(|(x, y, w)| SupportPoint { example: x, label: y, probability: F::from_f64(w / total) })
        .collect();
    Instance { num_labels, class, support }.validated()
}
