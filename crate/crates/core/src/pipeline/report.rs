//! Report structures and their JSON/CSV serialisations.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::scoring::InferenceCount;
use crate::confidence::{CohortScores, Method, ScoreRow};
use crate::error::{Error, Result};
use crate::eval::{
    AgreementStats, BootstrapInterval, ConfidenceDistribution, LabeledPrediction, SelectiveCurve,
    StratifiedReport,
};
use crate::model::RiskVector;

pub const REPORT_FORMAT: &str = "gradeconf-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEcho {
    pub master: u64,
    pub generator: u64,
    pub raters: u64,
    pub split: u64,
    pub scoring: u64,
    pub bootstrap: u64,
    pub baseline: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_bags: usize,
    pub n_train_pool: usize,
    pub n_test: usize,
    pub test_class_counts: Vec<usize>,
    pub test_mean_difficulty: f64,
    pub test_disagreement_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    /// `sosr`, or the comparison the model belongs to.
    pub role: String,
    pub fold: usize,
    pub member: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub designated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodValues {
    pub grade_sensitive: f64,
    pub mc_dropout: f64,
    pub deep_ensemble: f64,
    pub raw_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestBagRecord {
    pub bag_id: String,
    pub true_class: usize,
    pub predicted_class: usize,
    pub difficulty: f64,
    pub rater1: usize,
    pub rater2: usize,
    pub agreement: bool,
    pub risk: RiskVector,
    pub probs: Vec<f64>,
    pub confidence: MethodValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMetrics {
    pub n_bags: usize,
    pub overall_auc: BootstrapInterval,
    pub class_auc: Vec<Option<f64>>,
    pub accuracy: Option<f64>,
    pub weighted_accuracy: f64,
    pub adjacency_rate: f64,
    pub npv_carcinoma: Option<f64>,
    pub npv_abnormal: Option<f64>,
    /// Indexed `[true][predicted]`.
    pub confusion_matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDistribution {
    pub method: Method,
    pub classes: Vec<ConfidenceDistribution>,
}

/// A model family trained with one member per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub name: String,
    pub loss: String,
    pub overall_auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub weighted_accuracy: f64,
    pub adjacency_rate: f64,
    pub confusion_matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub seeds: SeedEcho,
    pub data: DataSummary,
    pub models: Vec<ModelSummary>,
    pub metrics: CohortMetrics,
    pub inference: Vec<InferenceCount>,
    pub selective_curves: Vec<SelectiveCurve>,
    pub stratified: StratifiedReport,
    pub agreement: Vec<AgreementStats>,
    pub confidence_by_class: Vec<MethodDistribution>,
    pub comparisons: Vec<ComparisonSummary>,
    pub test_bags: Vec<TestBagRecord>,
}

impl EvaluationReport {
    pub fn curve(&self, method: Method) -> Option<&SelectiveCurve> {
        self.selective_curves.iter().find(|c| c.method == method)
    }

    pub fn agreement_for(&self, method: Method) -> Option<&AgreementStats> {
        self.agreement.iter().find(|a| a.method == method)
    }

    pub fn comparison(&self, name: &str) -> Option<&ComparisonSummary> {
        self.comparisons.iter().find(|c| c.name == name)
    }

    pub fn inference_for(&self, method: Method) -> Option<&InferenceCount> {
        self.inference.iter().find(|c| c.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::format("report", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report", e))
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json output", e))?;
    write_text(path, &(text + "\n"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::format(format!("{}", path.display()), e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn record<W: Write>(w: &mut csv::Writer<W>, fields: &[String], path: &Path) -> Result<()> {
    w.write_record(fields)
        .map_err(|e| Error::format(format!("{}", path.display()), e))
}

/// `method,removed,retained,threshold,auc,random_auc`; undefined AUCs are
/// empty fields.
pub fn write_curves_csv(path: &Path, curves: &[SelectiveCurve]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = ["method", "removed", "retained", "threshold", "auc", "random_auc"];
    record(&mut w, &header.map(String::from), path)?;
    for c in curves {
        for p in &c.points {
            let row = [
                c.method.to_string(),
                p.removed.to_string(),
                p.retained.to_string(),
                p.threshold.to_string(),
                opt(p.auc),
                opt(p.random_auc),
            ];
            record(&mut w, &row, path)?;
        }
    }
    finish(w, path)
}

pub fn write_threshold_csv(path: &Path, curves: &[SelectiveCurve]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = ["method", "threshold", "retained", "retained_fraction", "auc"];
    record(&mut w, &header.map(String::from), path)?;
    for c in curves {
        for p in &c.threshold_view {
            let row = [
                c.method.to_string(),
                p.threshold.to_string(),
                p.retained.to_string(),
                p.retained_fraction.to_string(),
                opt(p.auc),
            ];
            record(&mut w, &row, path)?;
        }
    }
    finish(w, path)
}

fn interval_fields(i: &BootstrapInterval) -> [String; 3] {
    [opt(i.point), opt(i.lo), opt(i.hi)]
}

pub fn write_stratified_csv(path: &Path, report: &StratifiedReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = [
        "method", "metric", "n_low", "n_high", "low", "low_lo", "low_hi", "high", "high_lo",
        "high_hi", "gap", "gap_lo", "gap_hi",
    ];
    record(&mut w, &header.map(String::from), path)?;
    for m in &report.methods {
        for r in &m.rows {
            let mut row = vec![
                m.method.to_string(),
                r.metric.clone(),
                m.n_low.to_string(),
                m.n_high.to_string(),
            ];
            row.extend(interval_fields(&r.low));
            row.extend(interval_fields(&r.high));
            row.extend(interval_fields(&r.gap));
            record(&mut w, &row, path)?;
        }
    }
    finish(w, path)
}

pub fn write_agreement_csv(path: &Path, stats: &[AgreementStats]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = [
        "method",
        "n_agree",
        "n_disagree",
        "median_agree",
        "median_disagree",
        "mann_whitney_u",
        "p_value",
        "exact",
    ];
    record(&mut w, &header.map(String::from), path)?;
    for s in stats {
        let row = [
            s.method.to_string(),
            s.n_agree.to_string(),
            s.n_disagree.to_string(),
            s.median_agree.to_string(),
            s.median_disagree.to_string(),
            s.mann_whitney_u.to_string(),
            s.p_value.to_string(),
            s.exact.to_string(),
        ];
        record(&mut w, &row, path)?;
    }
    finish(w, path)
}

/// `bag_id,true_class,predicted_class,risk_0..risk_{n-1}`.
pub fn write_predictions_csv(path: &Path, preds: &[LabeledPrediction]) -> Result<()> {
    let n = preds.first().map_or(0, |p| p.n_classes());
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["bag_id", "true_class", "predicted_class"].map(String::from).into();
    header.extend((0..n).map(|k| format!("risk_{k}")));
    record(&mut w, &header, path)?;
    for p in preds {
        let mut row = vec![
            p.bag_id.clone(),
            p.true_class.to_string(),
            p.predicted_class.to_string(),
        ];
        row.extend(p.risk.iter().map(|r| r.to_string()));
        record(&mut w, &row, path)?;
    }
    finish(w, path)
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<LabeledPrediction>> {
    let bad = |detail: String| Error::format(format!("predictions {}", path.display()), detail);
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let n_risk = headers.iter().filter(|h| h.starts_with("risk_")).count();
    if headers.len() != 3 + n_risk || &headers[0] != "bag_id" || n_risk < 2 {
        return Err(bad("expected bag_id,true_class,predicted_class,risk_0..".into()));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let true_class: usize = field(1)
            .parse()
            .map_err(|_| bad(format!("row {}: bad true_class `{}`", line + 1, field(1))))?;
        let risk = (3..3 + n_risk)
            .map(|i| {
                field(i)
                    .parse::<f64>()
                    .map_err(|_| bad(format!("row {}: bad risk `{}`", line + 1, field(i))))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LabeledPrediction::new(field(0), true_class, RiskVector(risk))?);
    }
    Ok(out)
}

pub fn score_rows(preds: &[LabeledPrediction], scores: &[CohortScores]) -> Vec<ScoreRow> {
    scores
        .iter()
        .flat_map(|s| {
            s.scores.iter().zip(preds).map(|(c, p)| ScoreRow {
                bag_id: c.bag_id.clone(),
                method: c.method,
                confidence: c.value,
                predicted_class: p.predicted_class,
                true_class: p.true_class,
            })
        })
        .collect()
}

/// Regroups exported score rows into cohorts aligned with `preds`.
pub fn cohorts_from_rows(preds: &[LabeledPrediction], rows: &[ScoreRow]) -> Result<Vec<CohortScores>> {
    let mut out = Vec::new();
    for method in Method::ALL {
        let mine: Vec<&ScoreRow> = rows.iter().filter(|r| r.method == method).collect();
        if mine.is_empty() {
            continue;
        }
        let by_id: std::collections::HashMap<&str, f64> =
            mine.iter().map(|r| (r.bag_id.as_str(), r.confidence)).collect();
        let scores = preds
            .iter()
            .map(|p| {
                by_id
                    .get(p.bag_id.as_str())
                    .map(|&value| crate::confidence::ConfidenceScore {
                        bag_id: p.bag_id.clone(),
                        method,
                        value,
                    })
                    .ok_or_else(|| {
                        Error::contract(format!("no {method} score for bag `{}`", p.bag_id))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(CohortScores {
            method,
            scores,
            normalization: crate::confidence::Normalization::Imported,
        });
    }
    Ok(out)
}
