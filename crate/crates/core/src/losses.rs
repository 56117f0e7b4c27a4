//! Cost tables, the smooth one-sided regression (SOSR) loss and the
//! cross-entropy baseline.
//!
//! SOSR trains the network to output a per-class *risk*: for an example of
//! class `y`, the risk of `y` is pushed below zero and every other class `k`
//! is pushed above the cost `C[y][k]` of predicting it. The per-example loss
//! is
//!
//! ```text
//! sum_k ln(1 + exp(s_k * (risk_k - C[y][k])))    s_k = +1 if k == y else -1
//! ```
//!
//! The published double sum over `i, j` is ambiguous about whether `i`
//! indexes examples or classes. This module reads the outer sum as the sum
//! over a batch and the inner one as the per-class one-sided terms above.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softmax, softplus};

const GRADE_NAMES: [&str; 4] = ["benign", "low_grade", "high_grade", "carcinoma"];

/// Error-cost table: `entries[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    entries: Vec<Vec<f64>>,
    class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMatrixKind {
    /// Expert-consensus table for the four head-and-neck grades.
    Custom,
    /// `|i - j| / (n - 1)`, truncated to two decimals.
    Linear,
}

impl FromStr for CostMatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "custom" => Ok(Self::Custom),
            "linear" => Ok(Self::Linear),
            other => Err(Error::config(format!(
                "unknown cost matrix kind `{other}` (expected `custom` or `linear`)"
            ))),
        }
    }
}

impl fmt::Display for CostMatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Custom => "custom",
            Self::Linear => "linear",
        })
    }
}

fn default_class_names(n: usize) -> Vec<String> {
    if n == GRADE_NAMES.len() {
        GRADE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("class_{i}")).collect()
    }
}

impl CostMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let names = default_class_names(entries.len());
        Self::with_names(entries, names)
    }

    pub fn with_names(entries: Vec<Vec<f64>>, class_names: Vec<String>) -> Result<Self> {
        let n = entries.len();
        if n < 2 {
            return Err(Error::config("cost matrix needs at least 2 classes"));
        }
        if class_names.len() != n {
            return Err(Error::DimensionMismatch {
                context: "cost matrix class names",
                expected: n,
                found: class_names.len(),
            });
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != n {
                return Err(Error::config(format!(
                    "cost matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &c) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::config(format!(
                        "cost matrix entry [{i}][{j}] = {c} outside [0, 1]"
                    )));
                }
                if i == j && c != 0.0 {
                    return Err(Error::config(format!(
                        "cost matrix diagonal entry [{i}][{i}] = {c} is not zero"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            class_names,
        })
    }

    pub fn builtin(kind: CostMatrixKind, n: usize) -> Result<Self> {
        match kind {
            CostMatrixKind::Custom => {
                if n != 4 {
                    return Err(Error::config(format!(
                        "the custom cost matrix is defined for 4 classes, not {n}"
                    )));
                }
                Self::new(vec![
                    vec![0.0, 0.1, 0.7, 1.0],
                    vec![0.1, 0.0, 0.3, 0.7],
                    vec![0.7, 0.3, 0.0, 0.3],
                    vec![1.0, 0.7, 0.3, 0.0],
                ])
            }
            CostMatrixKind::Linear => {
                if n < 2 {
                    return Err(Error::config("linear cost matrix needs n >= 2"));
                }
                let scale = (n - 1) as f64;
                let entries = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                let raw = i.abs_diff(j) as f64 / scale;
                                // truncate, so 2/3 becomes 0.66
                                (raw * 100.0 + 1e-9).floor() / 100.0
                            })
                            .collect()
                    })
                    .collect();
                Self::new(entries)
            }
        }
    }

    /// Parses `n` lines of `n` comma-separated reals. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|e| {
                        Error::format("cost matrix table", format!("line {}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn from_table_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&text)
    }

    pub fn n_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> f64 {
        self.entries[true_class][predicted]
    }

    pub fn row(&self, true_class: usize) -> &[f64] {
        &self.entries[true_class]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n_classes();
        (0..n).all(|i| (0..n).all(|j| self.entries[i][j] == self.entries[j][i]))
    }

    fn check(&self, risk: &[f64], true_class: usize) -> Result<()> {
        if risk.len() != self.n_classes() {
            return Err(Error::DimensionMismatch {
                context: "risk vector vs cost matrix",
                expected: self.n_classes(),
                found: risk.len(),
            });
        }
        if true_class >= self.n_classes() {
            return Err(Error::contract(format!(
                "class {true_class} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(())
    }
}

#[inline]
fn side(k: usize, true_class: usize) -> f64 {
    if k == true_class {
        1.0
    } else {
        -1.0
    }
}

pub fn sosr_loss(risk: &[f64], true_class: usize, cm: &CostMatrix) -> Result<f64> {
    cm.check(risk, true_class)?;
    Ok(risk
        .iter()
        .enumerate()
        .map(|(k, &r)| softplus(side(k, true_class) * (r - cm.get(true_class, k))))
        .sum())
}

/// Analytic derivative of [`sosr_loss`] with respect to each risk.
pub fn sosr_gradient(risk: &[f64], true_class: usize, cm: &CostMatrix) -> Result<Vec<f64>> {
    cm.check(risk, true_class)?;
    Ok(risk
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let s = side(k, true_class);
            s * sigmoid(s * (r - cm.get(true_class, k)))
        })
        .collect())
}

/// `-ln softmax(logits)[class]` together with its gradient
/// `softmax(logits) - one_hot(class)`.
pub fn cross_entropy_loss(logits: &[f64], true_class: usize) -> Result<(f64, Vec<f64>)> {
    if true_class >= logits.len() {
        return Err(Error::contract(format!(
            "class {true_class} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = softmax(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = log_z - logits[true_class];
    let mut grad = probs;
    grad[true_class] -= 1.0;
    Ok((loss, grad))
}

/// Training objective applied to the network output.
///
/// The network output is always read as a risk vector. For cross-entropy
/// the logits are the negated risks, so `argmin risk == argmax logits` and
/// `softmax(-risk)` is the usual posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    Sosr { cost_matrix: CostMatrix },
    CrossEntropy,
}

impl LossConfig {
    pub fn sosr(cost_matrix: CostMatrix) -> Self {
        LossConfig::Sosr { cost_matrix }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossConfig::Sosr { .. } => "sosr",
            LossConfig::CrossEntropy => "cross_entropy",
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        match self {
            LossConfig::Sosr { cost_matrix } if cost_matrix.n_classes() != n_classes => {
                Err(Error::DimensionMismatch {
                    context: "cost matrix vs class count",
                    expected: n_classes,
                    found: cost_matrix.n_classes(),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn loss(&self, risk: &[f64], true_class: usize) -> Result<f64> {
        match self {
            LossConfig::Sosr { cost_matrix } => sosr_loss(risk, true_class, cost_matrix),
            LossConfig::CrossEntropy => {
                let logits: Vec<f64> = risk.iter().map(|r| -r).collect();
                cross_entropy_loss(&logits, true_class).map(|(l, _)| l)
            }
        }
    }

    /// Loss and its gradient with respect to the risk vector.
    pub fn loss_and_gradient(&self, risk: &[f64], true_class: usize) -> Result<(f64, Vec<f64>)> {
        match self {
            LossConfig::Sosr { cost_matrix } => Ok((
                sosr_loss(risk, true_class, cost_matrix)?,
                sosr_gradient(risk, true_class, cost_matrix)?,
            )),
            LossConfig::CrossEntropy => {
                let logits: Vec<f64> = risk.iter().map(|r| -r).collect();
                let (loss, grad) = cross_entropy_loss(&logits, true_class)?;
                Ok((loss, grad.into_iter().map(|g| -g).collect()))
            }
        }
    }
}
