use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_aligned, overall_auc, LabeledPrediction};
use crate::confidence::{CohortScores, Method};
use crate::error::{Error, Result};
use crate::numerics::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivePoint {
    pub removed: usize,
    pub retained: usize,
    /// Lowest confidence among the retained bags.
    pub threshold: f64,
    /// `None` when the retained set lacks a class.
    pub auc: Option<f64>,
    /// Mean AUC after removing the same number of uniformly chosen bags.
    pub random_auc: Option<f64>,
}

/// Retained fraction and AUC when keeping bags with confidence >= threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub retained: usize,
    pub retained_fraction: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveCurve {
    pub method: Method,
    pub step: usize,
    pub random_trials: usize,
    pub points: Vec<SelectivePoint>,
    pub threshold_view: Vec<ThresholdPoint>,
}

impl SelectiveCurve {
    pub fn point_at(&self, removed: usize) -> Option<&SelectivePoint> {
        self.points.iter().find(|p| p.removed == removed)
    }
}

fn subset_auc(preds: &[LabeledPrediction], keep: &[usize]) -> Option<f64> {
    let subset: Vec<LabeledPrediction> = keep.iter().map(|&i| preds[i].clone()).collect();
    overall_auc(&subset).ok()
}

/// Overall AUC as the least confident bags are removed `step` at a time.
///
/// Bags are ordered by ascending confidence, ties broken by bag id. The
/// random baseline averages `random_trials` seeded random removal orders.
pub fn selective_curve(
    preds: &[LabeledPrediction],
    confidences: &CohortScores,
    step: usize,
    random_trials: usize,
    rng: &mut RandomStream,
) -> Result<SelectiveCurve> {
    check_aligned(preds, confidences)?;
    let n = preds.len();
    if step == 0 {
        return Err(Error::contract("selective curve step must be >= 1"));
    }
    if step > n {
        return Err(Error::contract(format!(
            "selective curve step {step} exceeds cohort size {n}"
        )));
    }
    let n_classes = preds[0].n_classes();
    let values = confidences.values();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .total_cmp(&values[b])
            .then_with(|| preds[a].bag_id.cmp(&preds[b].bag_id))
    });

    let removals: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|r| n - r >= n_classes.max(2) && *r < n)
        .collect();

    let trial_orders: Vec<Vec<usize>> = (0..random_trials)
        .map(|_| {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(rng);
            o
        })
        .collect();

    let points = removals
        .iter()
        .map(|&removed| {
            let keep = &order[removed..];
            let random: Vec<f64> = trial_orders
                .iter()
                .filter_map(|o| subset_auc(preds, &o[removed..]))
                .collect();
            SelectivePoint {
                removed,
                retained: n - removed,
                threshold: values[keep[0]],
                auc: subset_auc(preds, keep),
                random_auc: crate::numerics::mean(&random),
            }
        })
        .collect();

    let threshold_view = (0..=20)
        .map(|i| {
            let threshold = i as f64 / 20.0;
            let keep: Vec<usize> = (0..n).filter(|&j| values[j] >= threshold).collect();
            ThresholdPoint {
                threshold,
                retained: keep.len(),
                retained_fraction: keep.len() as f64 / n as f64,
                auc: subset_auc(preds, &keep),
            }
        })
        .collect();

    Ok(SelectiveCurve {
        method: confidences.method,
        step,
        random_trials,
        points,
        threshold_view,
    })
}
