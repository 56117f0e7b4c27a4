use serde::{Deserialize, Serialize};

use super::bootstrap::{percentile_interval, resample_groups, BootstrapInterval};
use super::{
    abnormal_classes, accuracy, carcinoma_classes, check_aligned, class_auc, confusion_matrix,
    npv, overall_auc, LabeledPrediction,
};
use crate::confidence::{CohortScores, Method};
use crate::error::{Error, Result};
use crate::numerics::{median, RandomStream};

/// Partition of a cohort at its median confidence. Bags exactly at the
/// median go to the high-confidence half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSplit {
    pub threshold: f64,
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

pub fn median_split(confidences: &CohortScores) -> Result<HalfSplit> {
    let values = confidences.values();
    let threshold =
        median(&values).ok_or_else(|| Error::contract("median split of an empty cohort"))?;
    let (high, low): (Vec<usize>, Vec<usize>) =
        (0..values.len()).partition(|&i| values[i] >= threshold);
    Ok(HalfSplit {
        threshold,
        low,
        high,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub low: BootstrapInterval,
    pub high: BootstrapInterval,
    /// high - low
    pub gap: BootstrapInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStratification {
    pub method: Method,
    pub threshold: f64,
    pub n_low: usize,
    pub n_high: usize,
    pub rows: Vec<MetricRow>,
    pub accuracy_low: Option<f64>,
    pub accuracy_high: Option<f64>,
    pub confusion_low: Vec<Vec<usize>>,
    pub confusion_high: Vec<Vec<usize>>,
}

impl MethodStratification {
    pub fn row(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub resamples: usize,
    pub methods: Vec<MethodStratification>,
}

impl StratifiedReport {
    pub fn method(&self, method: Method) -> Option<&MethodStratification> {
        self.methods.iter().find(|m| m.method == method)
    }
}

type MetricFn = Box<dyn Fn(&[LabeledPrediction]) -> Option<f64>>;

fn metric_table(n_classes: usize) -> Vec<(String, MetricFn)> {
    let mut table: Vec<(String, MetricFn)> = vec![(
        "overall_auc".into(),
        Box::new(|p: &[LabeledPrediction]| overall_auc(p).ok()),
    )];
    for k in 0..n_classes {
        table.push((
            format!("auc_class_{k}"),
            Box::new(move |p: &[LabeledPrediction]| class_auc(p, k).ok()),
        ));
    }
    let carcinoma = carcinoma_classes(n_classes);
    let abnormal = abnormal_classes(n_classes);
    table.push((
        "npv_carcinoma".into(),
        Box::new(move |p: &[LabeledPrediction]| npv(p, &carcinoma)),
    ));
    table.push((
        "npv_abnormal".into(),
        Box::new(move |p: &[LabeledPrediction]| npv(p, &abnormal)),
    ));
    table
}

fn gather(preds: &[LabeledPrediction], idx: &[usize]) -> Vec<LabeledPrediction> {
    idx.iter().map(|&i| preds[i].clone()).collect()
}

fn stratify_one(
    preds: &[LabeledPrediction],
    scores: &CohortScores,
    resamples: usize,
    rng: &mut RandomStream,
) -> Result<MethodStratification> {
    check_aligned(preds, scores)?;
    let n_classes = preds[0].n_classes();
    let split = median_split(scores)?;
    if split.low.is_empty() || split.high.is_empty() {
        return Err(Error::contract(format!(
            "median split of `{}` left an empty half ({} low, {} high)",
            scores.method,
            split.low.len(),
            split.high.len()
        )));
    }
    let low = gather(preds, &split.low);
    let high = gather(preds, &split.high);
    let table = metric_table(n_classes);

    let mut low_draws = vec![Vec::with_capacity(resamples); table.len()];
    let mut high_draws = vec![Vec::with_capacity(resamples); table.len()];
    for _ in 0..resamples {
        let idx = resample_groups(&[low.len(), high.len()], rng);
        let lb = gather(&low, &idx[0]);
        let hb = gather(&high, &idx[1]);
        for (m, (_, f)) in table.iter().enumerate() {
            low_draws[m].push(f(&lb));
            high_draws[m].push(f(&hb));
        }
    }

    let rows = table
        .iter()
        .enumerate()
        .map(|(m, (name, f))| {
            let (pl, ph) = (f(&low), f(&high));
            let gaps: Vec<Option<f64>> = low_draws[m]
                .iter()
                .zip(&high_draws[m])
                .map(|(l, h)| Some((*h)? - (*l)?))
                .collect();
            let point_gap = pl.zip(ph).map(|(l, h)| h - l);
            MetricRow {
                metric: name.clone(),
                low: percentile_interval(pl, &low_draws[m]),
                high: percentile_interval(ph, &high_draws[m]),
                gap: percentile_interval(point_gap, &gaps),
            }
        })
        .collect();

    Ok(MethodStratification {
        method: scores.method,
        threshold: split.threshold,
        n_low: low.len(),
        n_high: high.len(),
        rows,
        accuracy_low: accuracy(&low),
        accuracy_high: accuracy(&high),
        confusion_low: confusion_matrix(&low, n_classes),
        confusion_high: confusion_matrix(&high, n_classes),
    })
}

/// Splits the cohort at each method's median confidence and compares the
/// halves, with percentile bootstrap intervals from `resamples` draws taken
/// within each half.
pub fn median_split_report(
    preds: &[LabeledPrediction],
    confidences: &[CohortScores],
    resamples: usize,
    rng: &mut RandomStream,
) -> Result<StratifiedReport> {
    if resamples < 100 {
        return Err(Error::contract(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    let n_classes = preds
        .first()
        .ok_or_else(|| Error::contract("median split of an empty cohort"))?
        .n_classes();
    if preds.len() < 2 * n_classes {
        return Err(Error::contract(format!(
            "median split needs at least {} bags, got {}",
            2 * n_classes,
            preds.len()
        )));
    }
    let methods = confidences
        .iter()
        .map(|scores| {
            let mut method_rng = rng.child(scores.method as u64);
            stratify_one(preds, scores, resamples, &mut method_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StratifiedReport { resamples, methods })
}
