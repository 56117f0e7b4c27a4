//! Selective prediction, median-split stratification and rater agreement
//! on a simulated cohort of risk vectors (no training involved).

use gradeconf::confidence::{grade_sensitive_cohort, raw_risk_confidence};
use gradeconf::eval::{
    agreement_analysis, median_split_report, overall_auc, selective_curve, LabeledPrediction,
};
use gradeconf::model::RiskVector;
use gradeconf::numerics::{streams, RandomStream};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> gradeconf::Result<()> {
    let mut rng = RandomStream::new(21, streams::DATA);
    let mut preds = Vec::new();
    let mut agreement = Vec::new();
    // each bag sits at a latent severity; hard bags sit between two grades
    for i in 0..200 {
        let grade = i % 4;
        let hardness: f64 = rng.random();
        let latent = grade as f64 - 0.5 * hardness + 0.25 * rng.sample::<f64, _>(StandardNormal);
        let risk: Vec<f64> = (0..4).map(|k| 3.0 * (k as f64 - latent).abs()).collect();
        preds.push(LabeledPrediction::new(format!("bag_{i:03}"), grade, RiskVector(risk))?);
        agreement.push(rng.random::<f64>() > 0.6 * hardness);
    }
    let risks: Vec<(String, RiskVector)> = preds.iter().map(|p| (p.bag_id.clone(), p.risk.clone())).collect();
    let gs = grade_sensitive_cohort(&risks)?;
    let raw = raw_risk_confidence(&risks)?;
    println!("overall AUC on all {} bags: {:.4}", preds.len(), overall_auc(&preds)?);

    let mut baseline = RandomStream::new(21, streams::BASELINE);
    for scores in [&gs, &raw] {
        let curve = selective_curve(&preds, scores, 25, 50, &mut baseline)?;
        println!("\n{} selective curve:", scores.method.as_str());
        for p in &curve.points {
            println!(
                "  removed {:>3}  AUC {:.4}  random removal {:.4}",
                p.removed,
                p.auc.unwrap_or(f64::NAN),
                p.random_auc.unwrap_or(f64::NAN)
            );
        }
    }

    let mut boot = RandomStream::new(21, streams::BOOTSTRAP);
    let report = median_split_report(&preds, &[gs.clone(), raw.clone()], 500, &mut boot)?;
    println!();
    for m in &report.methods {
        if let Some(row) = m.row("overall_auc") {
            println!(
                "{:<16} low {:.3}  high {:.3}  gap {:.3} [{:.3}, {:.3}]",
                m.method.as_str(),
                row.low.point.unwrap_or(f64::NAN),
                row.high.point.unwrap_or(f64::NAN),
                row.gap.point.unwrap_or(f64::NAN),
                row.gap.lo.unwrap_or(f64::NAN),
                row.gap.hi.unwrap_or(f64::NAN)
            );
        }
    }

    let a = agreement_analysis(&gs, &agreement)?;
    println!(
        "\nraters agree on {} bags (median confidence {:.3}), disagree on {} ({:.3}); Mann-Whitney p = {:.2e}",
        a.n_agree, a.median_agree, a.n_disagree, a.median_disagree, a.p_value
    );
    Ok(())
}
