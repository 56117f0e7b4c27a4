use super::*;
use crate::confidence::{ConfidenceScore, Method, Normalization};
use crate::losses::CostMatrixKind;
use crate::numerics::{streams, RandomStream};
use proptest::prelude::*;
use rand::Rng;

/// O(n^2) pair counting, ties counted one half.
fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

fn pred(id: &str, truth: usize, risk: &[f64]) -> LabeledPrediction {
    LabeledPrediction::new(id, truth, RiskVector(risk.to_vec())).unwrap()
}

/// Prediction whose argmin risk is `predicted`.
fn pred_as(id: &str, truth: usize, predicted: usize) -> LabeledPrediction {
    let risk: Vec<f64> = (0..4)
        .map(|k| if k == predicted { 0.0 } else { 1.0 + k as f64 * 0.01 })
        .collect();
    pred(id, truth, &risk)
}

fn scores_of(method: Method, preds: &[LabeledPrediction], values: &[f64]) -> CohortScores {
    CohortScores {
        method,
        scores: preds
            .iter()
            .zip(values)
            .map(|(p, v)| ConfidenceScore {
                bag_id: p.bag_id.clone(),
                method,
                value: *v,
            })
            .collect(),
        normalization: Normalization::PerSample,
    }
}

#[test]
fn binary_auc_examples() {
    let labels = [true, true, false, false];
    assert_eq!(binary_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 1.0);
    assert_eq!(binary_auc(&[0.9, 0.2, 0.8, 0.1], &labels).unwrap(), 0.75);
    assert_eq!(brute_force_auc(&[0.9, 0.2, 0.8, 0.1], &labels), 0.75);
    assert_eq!(binary_auc(&[0.5; 4], &labels).unwrap(), 0.5);
    assert!(binary_auc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(binary_auc(&[0.1, 0.2], &[true]).is_err());
}

#[test]
fn binary_auc_equals_pair_counting() {
    let mut rng = RandomStream::new(31, streams::DATA);
    for _ in 0..50 {
        let n = rng.random_range(2..=200);
        // coarse grid so that ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 20.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        assert_eq!(
            binary_auc(&scores, &labels).unwrap(),
            brute_force_auc(&scores, &labels)
        );
    }
}

proptest! {
    #[test]
    fn auc_complement(scores in prop::collection::vec(0.0f64..1.0, 2..60), seed in 0u64..1000) {
        let mut rng = RandomStream::new(seed, 0);
        let mut labels: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = binary_auc(&scores, &labels).unwrap();
        let b = binary_auc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_monotone_invariance(scores in prop::collection::vec(-3.0f64..3.0, 2..60), seed in 0u64..1000) {
        let mut rng = RandomStream::new(seed, 0);
        let mut labels: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let transformed: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(
            binary_auc(&scores, &labels).unwrap(),
            binary_auc(&transformed, &labels).unwrap()
        );
    }
}

fn handcrafted_cohort() -> Vec<LabeledPrediction> {
    vec![
        pred("a", 0, &[0.1, 0.5, 0.9, 1.2]),
        pred("b", 0, &[0.4, 0.3, 0.8, 1.0]),
        pred("c", 1, &[0.5, 0.2, 0.6, 0.9]),
        pred("d", 1, &[0.2, 0.4, 0.7, 1.1]),
        pred("e", 2, &[0.9, 0.5, 0.1, 0.4]),
        pred("f", 2, &[0.8, 0.3, 0.35, 0.5]),
        pred("g", 3, &[1.0, 0.7, 0.4, 0.2]),
        pred("h", 3, &[0.9, 0.8, 0.1, 0.3]),
    ]
}

#[test]
fn overall_auc_matches_mean_of_pair_counts() {
    let preds = handcrafted_cohort();
    let oracle: f64 = (0..4)
        .map(|k| {
            let s: Vec<f64> = preds.iter().map(|p| p.probs[k]).collect();
            let l: Vec<bool> = preds.iter().map(|p| p.true_class == k).collect();
            brute_force_auc(&s, &l)
        })
        .sum::<f64>()
        / 4.0;
    assert!((overall_auc(&preds).unwrap() - oracle).abs() < 1e-15);
}

#[test]
fn overall_auc_edge_cases() {
    let perfect: Vec<_> = (0..8).map(|i| pred_as(&format!("p{i}"), i % 4, i % 4)).collect();
    assert_eq!(overall_auc(&perfect).unwrap(), 1.0);
    let uniform: Vec<_> = (0..8).map(|i| pred(&format!("u{i}"), i % 4, &[0.0; 4])).collect();
    assert_eq!(overall_auc(&uniform).unwrap(), 0.5);
    let missing: Vec<_> = (0..6).map(|i| pred_as(&format!("m{i}"), i % 2, 0)).collect();
    let err = overall_auc(&missing).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn npv_examples() {
    let preds = vec![pred_as("a", 0, 0), pred_as("b", 3, 0), pred_as("c", 3, 3), pred_as("d", 3, 3)];
    assert_eq!(npv(&preds, &carcinoma_classes(4)), Some(0.5));
    let correct: Vec<_> = (0..4).map(|k| pred_as(&k.to_string(), k, k)).collect();
    assert_eq!(npv(&correct, &[3]), Some(1.0));
    let benign: Vec<_> = (0..3).map(|i| pred_as(&i.to_string(), 0, 0)).collect();
    assert_eq!(npv(&benign, &abnormal_classes(4)), Some(1.0));
    let all_positive = vec![pred_as("x", 3, 3)];
    assert_eq!(npv(&all_positive, &[3]), None);
}

#[test]
fn weighted_accuracy_examples() {
    let cm = CostMatrix::builtin(CostMatrixKind::Custom, 4).unwrap();
    let preds = vec![pred_as("a", 0, 0), pred_as("b", 3, 1)];
    assert!((weighted_accuracy(&preds, &cm).unwrap() - 0.65).abs() < 1e-12);
    let correct: Vec<_> = (0..4).map(|k| pred_as(&k.to_string(), k, k)).collect();
    assert_eq!(weighted_accuracy(&correct, &cm).unwrap(), 1.0);
    let worst: Vec<_> = (0..3).map(|i| pred_as(&i.to_string(), 0, 3)).collect();
    assert_eq!(weighted_accuracy(&worst, &cm).unwrap(), 0.0);
}

#[test]
fn confusion_matrix_examples() {
    let single = vec![pred_as("a", 2, 2)];
    let m = confusion_matrix(&single, 4);
    assert_eq!(m[2][2], 1);
    assert_eq!(m.iter().flatten().sum::<usize>(), 1);

    let preds = handcrafted_cohort();
    let m = confusion_matrix(&preds, 4);
    for k in 0..4 {
        let truth = preds.iter().filter(|p| p.true_class == k).count();
        assert_eq!(m[k].iter().sum::<usize>(), truth);
    }
    let trace: usize = (0..4).map(|k| m[k][k]).sum();
    let hits = preds.iter().filter(|p| p.predicted_class == p.true_class).count();
    assert_eq!(trace, hits);
    assert_eq!(accuracy(&preds), Some(trace as f64 / preds.len() as f64));
}

#[test]
fn adjacency_examples() {
    let ordered: Vec<_> = (0..5)
        .map(|i| pred(&i.to_string(), 0, &[0.1, 0.5, 1.0, 1.5]))
        .collect();
    assert_eq!(adjacency_rate(&ordered).unwrap(), 1.0);
    let half = vec![
        pred("a", 0, &[0.1, 0.2, 0.9, 1.5]),
        pred("b", 0, &[0.1, 5.0, 5.0, 0.2]),
        pred("c", 2, &[0.9, 0.3, 0.1, 0.4]),
        pred("d", 2, &[0.2, 0.9, 0.1, 0.8]),
    ];
    assert_eq!(adjacency_rate(&half).unwrap(), 0.5);
    assert!(adjacency_rate(&[]).is_err());
}

/// Four classes, `per_class` bags each; the first `wrong` bags of every
/// class are predicted as the next grade.
fn fallible_cohort(per_class: usize, wrong: usize) -> Vec<LabeledPrediction> {
    let mut out = Vec::new();
    for k in 0..4 {
        for i in 0..per_class {
            let predicted = if i < wrong { (k + 1) % 4 } else { k };
            let risk: Vec<f64> = (0..4)
                .map(|j: usize| if j == predicted { 0.0 } else { 0.5 + j.abs_diff(predicted) as f64 })
                .collect();
            out.push(pred(&format!("c{k}_{i:02}"), k, &risk));
        }
    }
    out
}

#[test]
fn selective_curve_contracts() {
    let preds = fallible_cohort(6, 2);
    let correctness: Vec<f64> = preds
        .iter()
        .map(|p| (p.predicted_class == p.true_class) as u8 as f64)
        .collect();
    let scores = scores_of(Method::GradeSensitive, &preds, &correctness);
    let mut rng = RandomStream::new(1, streams::BASELINE);
    let curve = selective_curve(&preds, &scores, 1, 20, &mut rng).unwrap();
    assert_eq!(curve.points[0].removed, 0);
    assert_eq!(curve.points[0].auc, Some(overall_auc(&preds).unwrap()));
    assert!(curve.points.windows(2).all(|w| w[1].removed > w[0].removed));

    let wrong = preds.iter().filter(|p| p.predicted_class != p.true_class).count();
    let aucs: Vec<f64> = curve.points[..=wrong].iter().map(|p| p.auc.unwrap()).collect();
    assert!(aucs.windows(2).all(|w| w[1] >= w[0]), "{aucs:?}");
    assert_eq!(aucs[wrong], 1.0);

    assert!(selective_curve(&preds, &scores, preds.len() + 1, 5, &mut rng).is_err());
    assert!(selective_curve(&preds, &scores, 0, 5, &mut rng).is_err());
}

#[test]
fn selective_curve_with_flat_confidence_tracks_random() {
    let preds = fallible_cohort(15, 5);
    let flat = scores_of(Method::RawRisk, &preds, &vec![0.5; preds.len()]);
    let mut rng = RandomStream::new(2, streams::BASELINE);
    let curve = selective_curve(&preds, &flat, 5, 200, &mut rng).unwrap();
    // with no information the tie order is the bag id order; both curves
    // stay close to the full-cohort AUC
    let full = curve.points[0].auc.unwrap();
    for p in curve.points.iter().filter(|p| p.retained >= 30) {
        assert!((p.random_auc.unwrap() - full).abs() < 0.05);
    }
    assert_eq!(curve.points[1].removed, 5);
}

#[test]
fn median_split_examples() {
    let preds: Vec<_> = (0..4).map(|k| pred_as(&k.to_string(), k, k)).collect();
    let s = scores_of(Method::GradeSensitive, &preds, &[0.1, 0.2, 0.8, 0.9]);
    let split = median_split(&s).unwrap();
    assert_eq!(split.threshold, 0.5);
    assert_eq!(split.low, vec![0, 1]);
    assert_eq!(split.high, vec![2, 3]);

    // ties at the median go high
    let s = scores_of(Method::GradeSensitive, &preds, &[0.1, 0.5, 0.5, 0.9]);
    let split = median_split(&s).unwrap();
    assert_eq!(split.high, vec![1, 2, 3]);
}

proptest! {
    #[test]
    fn median_split_partitions(values in prop::collection::btree_set(0u32..10_000, 1..80)) {
        let v: Vec<f64> = values.iter().map(|x| *x as f64 / 10_000.0).collect();
        let preds: Vec<_> = (0..v.len()).map(|i| pred_as(&i.to_string(), i % 4, 0)).collect();
        let s = scores_of(Method::McDropout, &preds, &v);
        let split = median_split(&s).unwrap();
        let mut all: Vec<usize> = split.low.iter().chain(&split.high).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..v.len()).collect::<Vec<_>>());
        prop_assert!(split.low.len().abs_diff(split.high.len()) <= 1);
    }
}

#[test]
fn oracle_confidence_opens_an_auc_gap() {
    let preds = fallible_cohort(10, 4);
    let correctness: Vec<f64> = preds
        .iter()
        .map(|p| (p.predicted_class == p.true_class) as u8 as f64 + 0.001 * p.probs[p.predicted_class])
        .collect();
    let scores = scores_of(Method::GradeSensitive, &preds, &correctness);
    let mut rng = RandomStream::new(3, streams::BOOTSTRAP);
    let report = median_split_report(&preds, std::slice::from_ref(&scores), 200, &mut rng).unwrap();
    let m = report.method(Method::GradeSensitive).unwrap();
    assert_eq!(m.n_low + m.n_high, preds.len());
    let row = m.row("overall_auc").unwrap();
    assert!(row.gap.point.unwrap() > 0.0);
    for r in &m.rows {
        for ci in [&r.low, &r.high, &r.gap] {
            if let (Some(lo), Some(hi)) = (ci.lo, ci.hi) {
                assert!(lo <= hi);
            }
        }
    }
    let again =
        median_split_report(&preds, &[scores], 200, &mut RandomStream::new(3, streams::BOOTSTRAP))
            .unwrap();
    assert_eq!(report, again);
}

#[test]
fn median_split_report_preconditions() {
    let preds: Vec<_> = (0..6).map(|i| pred_as(&i.to_string(), i % 4, 0)).collect();
    let s = scores_of(Method::RawRisk, &preds, &[0.3; 6]);
    let mut rng = RandomStream::new(0, 0);
    assert!(median_split_report(&preds, std::slice::from_ref(&s), 1000, &mut rng).is_err());
    let preds: Vec<_> = (0..8).map(|i| pred_as(&i.to_string(), i % 4, 0)).collect();
    let s = scores_of(Method::RawRisk, &preds, &[0.3; 8]);
    // every bag sits at the median: the low half is empty
    assert!(median_split_report(&preds, &[s], 1000, &mut rng).is_err());
}

#[test]
fn mann_whitney_examples() {
    let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!(r.u_first, 0.0);
    assert_eq!(r.u_second, 9.0);
    assert!(r.exact);
    // scipy.stats.mannwhitneyu(method="exact") gives 0.1
    assert!((r.p_value - 0.1).abs() < 1e-12);

    let same = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!(same.p_value > 0.9);

    let r = mann_whitney_u(&[1.0, 5.0, 2.0, 8.0], &[3.0, 4.0, 9.0, 10.0, 11.0]).unwrap();
    assert_eq!(r.u_first, 4.0);
    assert!((r.p_value - 0.19047619047619047).abs() < 1e-12);

    // asymptotic branch with ties; reference from scipy (use_continuity=True)
    let x = [0.1, 0.4, 0.4, 0.5, 0.9, 0.95, 0.3, 0.3, 0.8, 0.7];
    let y = [0.2, 0.25, 0.3, 0.6, 0.05, 0.1, 0.15, 0.4];
    let r = mann_whitney_u(&x, &y).unwrap();
    assert!(!r.exact);
    assert_eq!(r.u_first, 64.5);
    assert!((r.p_value - 0.0321590142477466).abs() < 1e-9);

    assert!(mann_whitney_u(&[], &[1.0]).is_err());
}

proptest! {
    #[test]
    fn mann_whitney_u_identity(
        a in prop::collection::vec(0.0f64..1.0, 1..30),
        b in prop::collection::vec(0.0f64..1.0, 1..30),
    ) {
        let r = mann_whitney_u(&a, &b).unwrap();
        prop_assert!((r.u_first + r.u_second - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }
}

#[test]
fn agreement_analysis_groups() {
    let preds: Vec<_> = (0..6).map(|i| pred_as(&i.to_string(), i % 4, 0)).collect();
    let s = scores_of(Method::GradeSensitive, &preds, &[0.9, 0.8, 0.7, 0.1, 0.2, 0.3]);
    let flags = [true, true, true, false, false, false];
    let stats = agreement_analysis(&s, &flags).unwrap();
    assert_eq!((stats.n_agree, stats.n_disagree), (3, 3));
    assert_eq!(stats.median_agree, 0.8);
    assert_eq!(stats.median_disagree, 0.2);
    assert_eq!(stats.mann_whitney_u, 9.0);
    assert!(agreement_analysis(&s, &[true; 6]).is_err());
    assert!(agreement_analysis(&s, &[true; 5]).is_err());
}

#[test]
fn confidence_distributions_per_class() {
    let preds = handcrafted_cohort();
    let values = [0.1, 0.3, 0.5, 0.7, 0.2, 0.4, 0.6, 0.8];
    let s = scores_of(Method::GradeSensitive, &preds, &values);
    let d = confidence_by_class(&preds, &s).unwrap();
    assert_eq!(d.len(), 4);
    assert_eq!(d[0].n, 2);
    assert!((d[0].mean.unwrap() - 0.2).abs() < 1e-12);
    assert!((d[3].median.unwrap() - 0.7).abs() < 1e-12);
}
