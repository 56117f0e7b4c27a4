//! Trains a small cross-validated ensemble, scores held-out bags with all
//! four confidence methods and reports what each one cost in forward
//! passes.

use gradeconf::confidence::Method;
use gradeconf::losses::{CostMatrix, CostMatrixKind, LossConfig};
use gradeconf::model::{ArchitectureConfig, Bag};
use gradeconf::pipeline::{score_only, train_ensemble, ScoreOptions, TrainingSchedule};
use gradeconf::synthdata::{generate, stratified_holdout, GeneratorConfig};

fn main() -> gradeconf::Result<()> {
    let ds = generate(&GeneratorConfig {
        bags_per_class: 30,
        seed: 9,
        ..GeneratorConfig::default()
    })?;
    let (rest, test) = stratified_holdout(&ds.labels(), 0.2, 9)?;
    let pool: Vec<&Bag> = rest.iter().map(|&i| &ds.bags[i]).collect();
    let test_bags: Vec<Bag> = test.iter().map(|&i| ds.bags[i].clone()).collect();

    let schedule = TrainingSchedule {
        epochs: 15,
        ..TrainingSchedule::default()
    };
    let loss = LossConfig::sosr(CostMatrix::builtin(CostMatrixKind::Custom, 4)?);
    let ensemble = train_ensemble(&pool, &ArchitectureConfig::default(), &schedule, &loss, 2, 3, 9)?;
    for s in &ensemble.summaries {
        println!(
            "fold {} member {}: {} epochs, best val loss {:.4}{}",
            s.fold,
            s.member,
            s.epochs_run,
            s.best_val_loss,
            if s.designated { " (MC dropout model)" } else { "" }
        );
    }

    let opts = ScoreOptions {
        mc_samples: 30,
        seed: 9,
        ..ScoreOptions::default()
    };
    let out = score_only(&ensemble.models, &test_bags, &Method::ALL, &opts)?;

    println!("\n{:<10} {:>5} {:>5} {:>6} {:>6} {:>6} {:>6}", "bag", "true", "pred", "gs", "mc", "ens", "raw");
    let column = |m: Method| out.scores_for(m).expect("requested").values();
    let (gs, mc, ens, raw) = (
        column(Method::GradeSensitive),
        column(Method::McDropout),
        column(Method::DeepEnsemble),
        column(Method::RawRisk),
    );
    for (i, p) in out.predictions.iter().enumerate().take(12) {
        println!(
            "{:<10} {:>5} {:>5} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            p.bag_id, p.true_class, p.predicted_class, gs[i], mc[i], ens[i], raw[i]
        );
    }

    println!();
    for c in &out.inference {
        println!(
            "{:<16} {:>6} forward passes = {} per bag per {}",
            c.method.as_str(),
            c.forward_passes,
            c.passes_per_bag_per_unit,
            c.unit
        );
    }
    Ok(())
}
