//! On unambiguous, well-separated data the model should learn the grades
//! and no confidence method has anything to separate.

use gradeconf::confidence::Method;
use gradeconf::eval::{accuracy, LabeledPrediction};
use gradeconf::model::{forward, train, ArchitectureConfig, Bag, Dropout, TrainConfig};
use gradeconf::pipeline::{run_experiment, ExperimentConfig};
use gradeconf::synthdata::{generate, stratified_holdout, GeneratorConfig};

fn clean(bags_per_class: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        bags_per_class,
        ambiguity: 0.0,
        tile_noise: 0.3,
        lesion_fraction: 0.2,
        lesion_fraction_max: 0.2,
        tiles_min: 10,
        tiles_max: 20,
        seed,
        ..GeneratorConfig::default()
    }
}

#[test]
fn separable_data_is_learned() {
    let ds = generate(&clean(30, 2)).unwrap();
    let (fit, val) = stratified_holdout(&ds.labels(), 0.25, 2).unwrap();
    let fit: Vec<&Bag> = fit.iter().map(|&i| &ds.bags[i]).collect();
    let val: Vec<&Bag> = val.iter().map(|&i| &ds.bags[i]).collect();
    let cfg = TrainConfig {
        epochs: 25,
        learning_rate: 3e-4,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&fit, &val, &ArchitectureConfig::default(), &cfg).unwrap();
    let preds: Vec<LabeledPrediction> = val
        .iter()
        .map(|b| {
            let (r, _) = forward(&out.params, b, Dropout::Off).unwrap();
            LabeledPrediction::new(b.bag_id.clone(), b.label, r).unwrap()
        })
        .collect();
    let acc = accuracy(&preds).unwrap();
    assert!(acc > 0.9, "validation accuracy {acc}");
}

#[test]
fn easy_experiment_has_flat_stratification() {
    let mut cfg = ExperimentConfig::from_text(
        "
        folds = 2
        ensemble_size = 2
        mc_samples = 10
        bootstrap = 200
        random_trials = 10
        [train]
        epochs = 20
        learning_rate = 0.0003
        ",
    )
    .unwrap();
    let seed = cfg.generator.seed;
    cfg.generator = GeneratorConfig {
        seed,
        ..clean(40, seed)
    };
    let report = run_experiment(&cfg).unwrap();
    let auc = report.metrics.overall_auc.point.unwrap();
    assert!(auc > 0.95, "overall AUC {auc}");
    for m in Method::ALL {
        let row = report.stratified.method(m).unwrap().row("overall_auc").unwrap();
        // a confident half can miss a class entirely, leaving its AUC undefined
        for (half, v) in [("low", row.low.point), ("high", row.high.point)] {
            if let Some(v) = v {
                assert!(v > 0.95, "{} {half} AUC {v}", m.as_str());
            }
        }
        if let Some(gap) = row.gap.point {
            assert!(gap.abs() <= 0.05, "{} gap {gap}", m.as_str());
        }
    }
}
