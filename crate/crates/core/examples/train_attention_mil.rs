//! Trains one attention-MIL network with the SOSR loss and prints the
//! learning curve and held-out confusion matrix.

use gradeconf::eval::{accuracy, adjacency_rate, confusion_matrix, overall_auc, LabeledPrediction};
use gradeconf::model::{forward, train, ArchitectureConfig, Bag, Dropout, TrainConfig};
use gradeconf::synthdata::{generate, stratified_holdout, GeneratorConfig};

fn main() -> gradeconf::Result<()> {
    let ds = generate(&GeneratorConfig {
        bags_per_class: 40,
        ambiguity: 0.0,
        seed: 5,
        ..GeneratorConfig::default()
    })?;
    let labels = ds.labels();
    let (rest, test) = stratified_holdout(&labels, 0.25, 5)?;
    let rest_labels: Vec<usize> = rest.iter().map(|&i| labels[i]).collect();
    let (fit, val) = stratified_holdout(&rest_labels, 0.2, 6)?;
    let pick = |ix: &[usize], base: &[usize]| -> Vec<&Bag> { ix.iter().map(|&i| &ds.bags[base[i]]).collect() };
    let all: Vec<usize> = (0..ds.bags.len()).collect();

    let cfg = TrainConfig {
        epochs: 30,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&pick(&fit, &rest), &pick(&val, &rest), &ArchitectureConfig::default(), &cfg)?;
    for rec in out.history.iter().step_by(5) {
        println!(
            "epoch {:>3}  train {:.4}  val {:.4}",
            rec.epoch, rec.train_loss, rec.val_loss
        );
    }
    println!(
        "best epoch {} (stopped early: {})",
        out.best_epoch, out.stopped_early
    );

    let preds = pick(&test, &all)
        .into_iter()
        .map(|b| {
            let (risk, _) = forward(&out.params, b, Dropout::Off)?;
            LabeledPrediction::new(b.bag_id.clone(), b.label, risk)
        })
        .collect::<gradeconf::Result<Vec<_>>>()?;
    println!(
        "test: accuracy {:.3}  overall AUC {:.3}  adjacency {:.3}",
        accuracy(&preds).unwrap_or(f64::NAN),
        overall_auc(&preds)?,
        adjacency_rate(&preds)?
    );
    println!("confusion (rows = truth):");
    for row in confusion_matrix(&preds, 4) {
        println!("  {row:?}");
    }
    Ok(())
}
