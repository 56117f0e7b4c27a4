//! Confidence estimators.
//!
//! All scores live in `[0, 1]`, higher meaning more confident. The
//! grade-sensitive score is computed per sample from one risk vector. The
//! spread-based scores (MC dropout, deep ensembles) and the raw-risk
//! baseline are min-max normalised over the evaluated cohort, so they are
//! only comparable within one cohort; [`Normalization`] records which rule
//! produced a set of scores.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RiskVector;
use crate::numerics::{
    coordinate_mean, min_max, min_max_invert_normalize, min_max_normalize_or_one, sample_std,
    softmax_neg,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradeSensitive,
    McDropout,
    DeepEnsemble,
    RawRisk,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::GradeSensitive,
        Method::McDropout,
        Method::DeepEnsemble,
        Method::RawRisk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GradeSensitive => "grade_sensitive",
            Method::McDropout => "mc_dropout",
            Method::DeepEnsemble => "deep_ensemble",
            Method::RawRisk => "raw_risk",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown confidence method `{s}` (expected one of grade_sensitive, mc_dropout, deep_ensemble, raw_risk)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub bag_id: String,
    pub method: Method,
    pub value: f64,
}

/// How the values of a [`CohortScores`] were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum Normalization {
    /// Computed independently per bag.
    PerSample,
    /// Min-max normalised over the cohort. `min`/`max` refer to the raw
    /// statistic; `inverted` means larger statistics map to lower confidence.
    Cohort {
        statistic: String,
        min: f64,
        max: f64,
        inverted: bool,
    },
    /// Read back from an export; the original scope is unknown.
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortScores {
    pub method: Method,
    pub scores: Vec<ConfidenceScore>,
    pub normalization: Normalization,
}

impl CohortScores {
    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.value).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn build(method: Method, ids: Vec<String>, values: Vec<f64>, normalization: Normalization) -> Self {
        let scores = ids
            .into_iter()
            .zip(values)
            .map(|(bag_id, value)| ConfidenceScore {
                bag_id,
                method,
                value,
            })
            .collect();
        Self {
            method,
            scores,
            normalization,
        }
    }
}

/// Gap between the two largest entries of `softmax(-risk)`.
pub fn grade_sensitive(risk: &[f64]) -> Result<f64> {
    if risk.len() < 2 {
        return Err(Error::contract("grade-sensitive confidence needs at least 2 classes"));
    }
    let mut probs = softmax_neg(risk)?;
    probs.sort_by(|a, b| b.total_cmp(a));
    Ok(probs[0] - probs[1])
}

pub fn grade_sensitive_cohort(risks: &[(String, RiskVector)]) -> Result<CohortScores> {
    if risks.is_empty() {
        return Err(Error::contract("empty cohort"));
    }
    let values = risks
        .iter()
        .map(|(_, r)| grade_sensitive(r))
        .collect::<Result<Vec<_>>>()?;
    let ids = risks.iter().map(|(id, _)| id.clone()).collect();
    Ok(CohortScores::build(
        Method::GradeSensitive,
        ids,
        values,
        Normalization::PerSample,
    ))
}

/// Coordinate-wise mean of a set of predictions.
pub fn ensemble_average<V: AsRef<[f64]>>(predictions: &[V]) -> Result<RiskVector> {
    coordinate_mean(predictions).map(RiskVector)
}

/// How the per-class standard deviations of a sample set become one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadReduction {
    /// Mean of the per-class standard deviations.
    #[default]
    MeanOverClasses,
    /// Standard deviation of the coordinate of the class predicted by the
    /// sample mean.
    PredictedClass,
}

impl FromStr for SpreadReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_over_classes" => Ok(Self::MeanOverClasses),
            "predicted_class" => Ok(Self::PredictedClass),
            other => Err(Error::config(format!("unknown spread reduction `{other}`"))),
        }
    }
}

/// Sample standard deviation (M - 1 denominator) of a sample set, reduced
/// to a scalar.
pub fn spread_statistic<V: AsRef<[f64]>>(samples: &[V], reduction: SpreadReduction) -> Result<f64> {
    let std = sample_std(samples)?;
    Ok(match reduction {
        SpreadReduction::MeanOverClasses => std.iter().sum::<f64>() / std.len() as f64,
        SpreadReduction::PredictedClass => {
            let mean = coordinate_mean(samples)?;
            std[crate::numerics::argmin(&mean)]
        }
    })
}

/// Turns per-bag spreads into inverted, cohort-normalised confidences.
pub fn cohort_from_spread(method: Method, ids: Vec<String>, spreads: &[f64]) -> Result<CohortScores> {
    let (min, max) = min_max(spreads)?;
    let values = min_max_invert_normalize(spreads)?;
    Ok(CohortScores::build(
        method,
        ids,
        values,
        Normalization::Cohort {
            statistic: "sample_std".into(),
            min,
            max,
            inverted: true,
        },
    ))
}

fn spread_confidence(
    method: Method,
    samples_per_bag: &[(String, Vec<RiskVector>)],
    reduction: SpreadReduction,
) -> Result<CohortScores> {
    if samples_per_bag.is_empty() {
        return Err(Error::contract("empty cohort"));
    }
    let spreads = samples_per_bag
        .iter()
        .map(|(_, s)| spread_statistic(s, reduction))
        .collect::<Result<Vec<_>>>()?;
    let ids = samples_per_bag.iter().map(|(id, _)| id.clone()).collect();
    cohort_from_spread(method, ids, &spreads)
}

/// MC-dropout confidence from `M >= 2` stochastic passes per bag.
pub fn mc_dropout_confidence(
    samples_per_bag: &[(String, Vec<RiskVector>)],
    reduction: SpreadReduction,
) -> Result<CohortScores> {
    spread_confidence(Method::McDropout, samples_per_bag, reduction)
}

/// Deep-ensemble confidence from `D >= 2` model predictions per bag.
pub fn deep_ensemble_confidence(
    predictions_per_bag: &[(String, Vec<RiskVector>)],
    reduction: SpreadReduction,
) -> Result<CohortScores> {
    spread_confidence(Method::DeepEnsemble, predictions_per_bag, reduction)
}

/// Raw-output baseline: `-min_k risk_k`, min-max normalised over the cohort.
pub fn raw_risk_confidence(risks: &[(String, RiskVector)]) -> Result<CohortScores> {
    if risks.is_empty() {
        return Err(Error::contract("empty cohort"));
    }
    let stats: Vec<f64> = risks
        .iter()
        .map(|(_, r)| -r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let (min, max) = min_max(&stats)?;
    let values = min_max_normalize_or_one(&stats)?;
    let ids = risks.iter().map(|(id, _)| id.clone()).collect();
    Ok(CohortScores::build(
        Method::RawRisk,
        ids,
        values,
        Normalization::Cohort {
            statistic: "negated_min_risk".into(),
            min,
            max,
            inverted: false,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Top2 {
    pub first: usize,
    pub second: usize,
    pub adjacent: bool,
}

/// The two most probable classes under `softmax(-risk)`, ties to the lower
/// index.
pub fn top2_classes(risk: &[f64]) -> Result<Top2> {
    if risk.len() < 2 {
        return Err(Error::contract("top-2 classes need at least 2 classes"));
    }
    let probs = softmax_neg(risk)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // stable: equal probabilities keep index order
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let (first, second) = (order[0], order[1]);
    Ok(Top2 {
        first,
        second,
        adjacent: first.abs_diff(second) == 1,
    })
}

/// One line of the scores export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub bag_id: String,
    pub method: Method,
    pub confidence: f64,
    pub predicted_class: usize,
    pub true_class: usize,
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("scores csv", e))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::format("scores csv", e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("scores csv", e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(format!("scores csv {}", path.display()), e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn rv(v: &[f64]) -> RiskVector {
        RiskVector(v.to_vec())
    }

    fn cohort(samples: Vec<Vec<Vec<f64>>>) -> Vec<(String, Vec<RiskVector>)> {
        samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| (format!("b{i}"), s.into_iter().map(RiskVector).collect()))
            .collect()
    }

    #[test]
    fn grade_sensitive_examples() {
        assert_eq!(grade_sensitive(&[0.0; 4]).unwrap(), 0.0);
        // softmax(-[0,1,2,3]) = e^-k / sum
        let z: f64 = (0..4).map(|k| (-(k as f64)).exp()).sum();
        let want = (1.0 - (-1.0f64).exp()) / z;
        let got = grade_sensitive(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.4070).abs() < 1e-4);
        assert_eq!(grade_sensitive(&[0.2, 0.2, 5.0, 5.0]).unwrap(), 0.0);
        assert!(grade_sensitive(&[1.0]).is_err());
    }

    #[test]
    fn ensemble_average_examples() {
        assert_eq!(
            ensemble_average(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(),
            rv(&[1.0, 1.0])
        );
        assert_eq!(ensemble_average(&[vec![0.3, -2.0]]).unwrap(), rv(&[0.3, -2.0]));
        let empty: [Vec<f64>; 0] = [];
        assert!(ensemble_average(&empty).is_err());

        let mut rng = RandomStream::new(5, 0);
        let preds: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let avg = ensemble_average(&preds).unwrap();
        for k in 0..4 {
            let oracle = preds.iter().map(|p| p[k]).sum::<f64>() / 5.0;
            assert!((avg[k] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn mc_dropout_examples() {
        // bag 0 has identical samples; the others vary
        let scores = mc_dropout_confidence(
            &cohort(vec![
                vec![vec![1.0, 2.0]; 3],
                vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.5]],
                vec![vec![0.0, 3.0], vec![3.0, 0.0], vec![0.0, 0.0]],
            ]),
            SpreadReduction::MeanOverClasses,
        )
        .unwrap();
        assert_eq!(scores.scores[0].value, 1.0);
        assert!(scores.values().contains(&0.0));

        let single = mc_dropout_confidence(
            &cohort(vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]]),
            SpreadReduction::MeanOverClasses,
        )
        .unwrap();
        assert_eq!(single.values(), vec![1.0]);

        assert!(mc_dropout_confidence(
            &cohort(vec![vec![vec![0.0, 1.0]]]),
            SpreadReduction::MeanOverClasses
        )
        .is_err());
    }

    #[test]
    fn spreads_normalise_as_documented() {
        let s = cohort_from_spread(
            Method::McDropout,
            vec!["a".into(), "b".into(), "c".into()],
            &[0.0, 1.0, 2.0],
        )
        .unwrap();
        assert_eq!(s.values(), vec![1.0, 0.5, 0.0]);
        let flat = cohort_from_spread(Method::DeepEnsemble, vec!["a".into(), "b".into()], &[0.5, 0.5])
            .unwrap();
        assert_eq!(flat.values(), vec![1.0, 1.0]);
    }

    #[test]
    fn deep_ensemble_examples() {
        let same = cohort(vec![vec![vec![0.1, 0.9, 2.0]; 5], vec![vec![1.0, 0.0, 0.5]; 5]]);
        let s = deep_ensemble_confidence(&same, SpreadReduction::MeanOverClasses).unwrap();
        assert_eq!(s.values(), vec![1.0, 1.0]);
        assert!(deep_ensemble_confidence(
            &cohort(vec![vec![vec![0.0, 1.0]]]),
            SpreadReduction::MeanOverClasses
        )
        .is_err());
    }

    #[test]
    fn spread_matches_two_pass_oracle() {
        let mut rng = RandomStream::new(17, 0);
        for _ in 0..50 {
            let m = rng.random_range(2..12);
            let samples: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let mut oracle = 0.0;
            for k in 0..4 {
                let mu = samples.iter().map(|s| s[k]).sum::<f64>() / m as f64;
                let ss = samples.iter().map(|s| (s[k] - mu).powi(2)).sum::<f64>();
                oracle += (ss / (m as f64 - 1.0)).sqrt();
            }
            oracle /= 4.0;
            let got = spread_statistic(&samples, SpreadReduction::MeanOverClasses).unwrap();
            assert!((got - oracle).abs() < 1e-10);
        }
        let pc = spread_statistic(
            &[vec![0.0, 5.0], vec![2.0, 5.0]],
            SpreadReduction::PredictedClass,
        )
        .unwrap();
        assert!((pc - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn raw_risk_examples() {
        let risks = vec![
            ("a".to_string(), rv(&[0.0, 1.0, 2.0])),
            ("b".to_string(), rv(&[0.9, 0.5, 2.0])),
            ("c".to_string(), rv(&[1.0, 1.5, 3.0])),
        ];
        assert_eq!(raw_risk_confidence(&risks).unwrap().values(), vec![1.0, 0.5, 0.0]);

        let shifted: Vec<_> = risks
            .iter()
            .map(|(id, r)| (id.clone(), rv(&r.iter().map(|v| v + 0.25).collect::<Vec<_>>())))
            .collect();
        let a = raw_risk_confidence(&risks).unwrap().values();
        let b = raw_risk_confidence(&shifted).unwrap().values();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }

        let flat = vec![("a".to_string(), rv(&[0.2, 1.0])), ("b".to_string(), rv(&[1.0, 0.2]))];
        assert_eq!(raw_risk_confidence(&flat).unwrap().values(), vec![1.0, 1.0]);
        assert!(raw_risk_confidence(&[]).is_err());
    }

    #[test]
    fn top2_examples() {
        assert_eq!(
            top2_classes(&[0.1, 0.2, 0.9, 1.5]).unwrap(),
            Top2 { first: 0, second: 1, adjacent: true }
        );
        assert_eq!(
            top2_classes(&[0.1, 5.0, 5.0, 0.2]).unwrap(),
            Top2 { first: 0, second: 3, adjacent: false }
        );
        assert_eq!(
            top2_classes(&[0.0; 4]).unwrap(),
            Top2 { first: 0, second: 1, adjacent: true }
        );
        assert!(top2_classes(&[0.0]).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("softmax".parse::<Method>().is_err());
    }

    #[test]
    fn scores_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let rows = vec![
            ScoreRow {
                bag_id: "b1".into(),
                method: Method::GradeSensitive,
                confidence: 0.25,
                predicted_class: 1,
                true_class: 2,
            },
            ScoreRow {
                bag_id: "b2".into(),
                method: Method::RawRisk,
                confidence: 1.0,
                predicted_class: 0,
                true_class: 0,
            },
        ];
        write_scores_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("bag_id,method,confidence,predicted_class,true_class\n"));
        assert_eq!(read_scores_csv(&path).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn grade_sensitive_shift_invariant_and_bounded(
            v in prop::collection::vec(-20.0f64..20.0, 4),
            c in -10.0f64..10.0,
        ) {
            let a = grade_sensitive(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = grade_sensitive(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&a));
        }

        #[test]
        fn top2_first_is_argmin(v in prop::collection::vec(-20.0f64..20.0, 2..8)) {
            let min = crate::numerics::argmin(&v);
            prop_assume!(v.iter().enumerate().all(|(i, x)| i == min || *x > v[min]));
            prop_assert_eq!(top2_classes(&v).unwrap().first, min);
        }

        #[test]
        fn cohort_scores_span_unit_interval(
            spreads in prop::collection::vec(0.0f64..5.0, 2..30)
        ) {
            let ids = (0..spreads.len()).map(|i| i.to_string()).collect();
            let s = cohort_from_spread(Method::McDropout, ids, &spreads).unwrap();
            let v = s.values();
            prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            let (lo, hi) = min_max(&spreads).unwrap();
            if hi > lo {
                prop_assert!(v.contains(&0.0) && v.contains(&1.0));
            }
        }

        #[test]
        fn mc_and_ensemble_share_a_pipeline(
            raw in prop::collection::vec(prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 2..6), 1..6)
        ) {
            let c = cohort(raw);
            let a = mc_dropout_confidence(&c, SpreadReduction::MeanOverClasses).unwrap();
            let b = deep_ensemble_confidence(&c, SpreadReduction::MeanOverClasses).unwrap();
            prop_assert_eq!(a.values(), b.values());
        }
    }
}
