//! Saves a trained model set, reloads it and rescores bags from disk
//! without retraining. The grade-sensitive score needs nothing beyond the
//! prediction pass itself.

use gradeconf::confidence::Method;
use gradeconf::losses::{CostMatrix, CostMatrixKind, LossConfig};
use gradeconf::model::{read_bag_dir, write_bag_dir, ArchitectureConfig, Bag};
use gradeconf::pipeline::{score_only, train_ensemble, ModelSet, ScoreOptions, TrainingSchedule};
use gradeconf::synthdata::{generate, stratified_holdout, GeneratorConfig};

fn main() -> gradeconf::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let ds = generate(&GeneratorConfig {
        bags_per_class: 20,
        seed: 12,
        ..GeneratorConfig::default()
    })?;
    let (rest, test) = stratified_holdout(&ds.labels(), 0.25, 12)?;
    let pool: Vec<&Bag> = rest.iter().map(|&i| &ds.bags[i]).collect();
    let mut test_bags: Vec<Bag> = test.iter().map(|&i| ds.bags[i].clone()).collect();
    // the bag directory reads back in id order
    test_bags.sort_by(|a, b| a.bag_id.cmp(&b.bag_id));

    let schedule = TrainingSchedule {
        epochs: 8,
        ..TrainingSchedule::default()
    };
    let loss = LossConfig::sosr(CostMatrix::builtin(CostMatrixKind::Custom, 4)?);
    let trained = train_ensemble(&pool, &ArchitectureConfig::default(), &schedule, &loss, 2, 2, 12)?;
    trained.models.save(&dir.path().join("models"))?;
    write_bag_dir(&dir.path().join("bags"), &test_bags)?;

    let models = ModelSet::load(&dir.path().join("models"))?;
    let bags = read_bag_dir(&dir.path().join("bags"))?;
    let opts = ScoreOptions {
        mc_samples: 10,
        ..ScoreOptions::default()
    };
    let fresh = score_only(&trained.models, &test_bags, &[Method::GradeSensitive], &opts)?;
    let reloaded = score_only(&models, &bags, &Method::ALL, &opts)?;

    let same = fresh.scores[0] == *reloaded.scores_for(Method::GradeSensitive).expect("requested");
    println!("{} models reloaded, grade-sensitive scores unchanged: {same}", models.n_models());
    for c in &reloaded.inference {
        println!(
            "{:<16} {:>5} passes over {} bags",
            c.method.as_str(),
            c.forward_passes,
            c.bags
        );
    }
    Ok(())
}
