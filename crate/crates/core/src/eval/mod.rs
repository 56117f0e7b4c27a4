//! Classification metrics and the statistics used to compare confidence
//! estimators: one-vs-rest AUC, NPV, cost-weighted accuracy, confusion
//! matrices, selective-prediction curves, median-threshold stratification
//! with bootstrap intervals, and rater-agreement tests.

mod agreement;
mod bootstrap;
mod selective;
mod stratify;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::confidence::{top2_classes, CohortScores};
use crate::error::{Error, Result};
use crate::losses::CostMatrix;
use crate::model::RiskVector;
use crate::numerics::{argmax, mean, quantile, softmax_neg};

pub use agreement::{agreement_analysis, mann_whitney_u, AgreementStats, MannWhitney};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_groups, percentile_interval, BootstrapInterval};
pub use selective::{selective_curve, SelectiveCurve, SelectivePoint, ThresholdPoint};
pub use stratify::{
    median_split, median_split_report, HalfSplit, MethodStratification, MetricRow,
    StratifiedReport,
};

/// A model prediction for one bag together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub bag_id: String,
    pub true_class: usize,
    pub risk: RiskVector,
    /// `softmax(-risk)`
    pub probs: Vec<f64>,
    pub predicted_class: usize,
}

impl LabeledPrediction {
    pub fn new(bag_id: impl Into<String>, true_class: usize, risk: RiskVector) -> Result<Self> {
        let probs = softmax_neg(&risk)?;
        if true_class >= risk.len() {
            return Err(Error::contract(format!(
                "true class {true_class} out of range for {} classes",
                risk.len()
            )));
        }
        let predicted_class = argmax(&probs);
        debug_assert_eq!(predicted_class, risk.predicted_class());
        Ok(Self {
            bag_id: bag_id.into(),
            true_class,
            risk,
            probs,
            predicted_class,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }
}

fn n_classes(preds: &[LabeledPrediction]) -> Result<usize> {
    let n = preds
        .first()
        .ok_or_else(|| Error::contract("empty prediction set"))?
        .n_classes();
    if let Some(p) = preds.iter().find(|p| p.n_classes() != n) {
        return Err(Error::DimensionMismatch {
            context: "prediction class counts",
            expected: n,
            found: p.n_classes(),
        });
    }
    Ok(n)
}

/// Mann-Whitney AUC: `P(pos > neg) + 0.5 P(pos == neg)`, via mid-ranks.
pub fn binary_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "AUC scores vs labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract("AUC is undefined unless both classes are present"));
    }
    let ranks = mid_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// 1-based ranks with ties sharing their average rank.
pub(crate) fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest AUC of class `k`, scored by `probs[k]`.
pub fn class_auc(preds: &[LabeledPrediction], k: usize) -> Result<f64> {
    let scores: Vec<f64> = preds.iter().map(|p| p.probs[k]).collect();
    let labels: Vec<bool> = preds.iter().map(|p| p.true_class == k).collect();
    binary_auc(&scores, &labels)
}

/// Unweighted mean of the one-vs-rest AUCs of every class.
pub fn overall_auc(preds: &[LabeledPrediction]) -> Result<f64> {
    let n = n_classes(preds)?;
    let present: BTreeSet<usize> = preds.iter().map(|p| p.true_class).collect();
    let missing: Vec<usize> = (0..n).filter(|k| !present.contains(k)).collect();
    if !missing.is_empty() {
        return Err(Error::contract(format!(
            "overall AUC needs every class; absent classes: {missing:?}"
        )));
    }
    if present.len() < 2 {
        return Err(Error::contract("overall AUC needs at least two classes"));
    }
    let total = (0..n)
        .map(|k| class_auc(preds, k))
        .sum::<Result<f64>>()?;
    Ok(total / n as f64)
}

/// Negative predictive value for a set of "positive" classes; `None` when
/// nothing is predicted negative.
pub fn npv(preds: &[LabeledPrediction], positive: &[usize]) -> Option<f64> {
    let negatives: Vec<&LabeledPrediction> = preds
        .iter()
        .filter(|p| !positive.contains(&p.predicted_class))
        .collect();
    if negatives.is_empty() {
        return None;
    }
    let correct = negatives
        .iter()
        .filter(|p| !positive.contains(&p.true_class))
        .count();
    Some(correct as f64 / negatives.len() as f64)
}

/// The carcinoma set `{n-1}`.
pub fn carcinoma_classes(n: usize) -> Vec<usize> {
    vec![n - 1]
}

/// The abnormal set `{1, .., n-1}` (everything except benign).
pub fn abnormal_classes(n: usize) -> Vec<usize> {
    (1..n).collect()
}

/// `1 - mean(C[true][predicted])`.
pub fn weighted_accuracy(preds: &[LabeledPrediction], cm: &CostMatrix) -> Result<f64> {
    let n = n_classes(preds)?;
    if n != cm.n_classes() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs cost matrix",
            expected: cm.n_classes(),
            found: n,
        });
    }
    let cost: f64 = preds
        .iter()
        .map(|p| cm.get(p.true_class, p.predicted_class))
        .sum();
    Ok(1.0 - cost / preds.len() as f64)
}

pub fn accuracy(preds: &[LabeledPrediction]) -> Option<f64> {
    if preds.is_empty() {
        return None;
    }
    let hits = preds
        .iter()
        .filter(|p| p.predicted_class == p.true_class)
        .count();
    Some(hits as f64 / preds.len() as f64)
}

/// Counts indexed `[true][predicted]`.
pub fn confusion_matrix(preds: &[LabeledPrediction], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for p in preds {
        m[p.true_class][p.predicted_class] += 1;
    }
    m
}

/// Fraction of bags whose two most probable classes are adjacent grades.
pub fn adjacency_rate(preds: &[LabeledPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::contract("adjacency rate of an empty cohort"));
    }
    let mut adjacent = 0;
    for p in preds {
        if top2_classes(&p.risk)?.adjacent {
            adjacent += 1;
        }
    }
    Ok(adjacent as f64 / preds.len() as f64)
}

/// Summary of one method's confidences among the bags of one true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceDistribution {
    pub class: usize,
    pub n: usize,
    pub mean: Option<f64>,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
}

pub fn confidence_by_class(
    preds: &[LabeledPrediction],
    scores: &CohortScores,
) -> Result<Vec<ConfidenceDistribution>> {
    check_aligned(preds, scores)?;
    let n = n_classes(preds)?;
    Ok((0..n)
        .map(|class| {
            let values: Vec<f64> = preds
                .iter()
                .zip(&scores.scores)
                .filter(|(p, _)| p.true_class == class)
                .map(|(_, s)| s.value)
                .collect();
            ConfidenceDistribution {
                class,
                n: values.len(),
                mean: mean(&values),
                q25: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q75: quantile(&values, 0.75),
            }
        })
        .collect())
}

/// Predictions and scores must describe the same bags in the same order.
pub(crate) fn check_aligned(preds: &[LabeledPrediction], scores: &CohortScores) -> Result<()> {
    if preds.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs confidence scores",
            expected: preds.len(),
            found: scores.len(),
        });
    }
    if let Some((p, s)) = preds
        .iter()
        .zip(&scores.scores)
        .find(|(p, s)| p.bag_id != s.bag_id)
    {
        return Err(Error::contract(format!(
            "prediction `{}` is paired with score of `{}`",
            p.bag_id, s.bag_id
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
