//! End-to-end experiment: data, cross-validated ensembles, scoring and
//! evaluation.

mod config;
mod report;
mod scoring;

pub use config::{ExperimentConfig, TrainingSchedule};
pub use report::{
    cohorts_from_rows, read_predictions_csv, score_rows, write_agreement_csv, write_curves_csv,
    write_predictions_csv, write_stratified_csv, write_threshold_csv, CohortMetrics,
    ComparisonSummary, DataSummary, EvaluationReport, MethodDistribution, MethodValues,
    ModelSummary, SeedEcho, TestBagRecord, REPORT_FORMAT, REPORT_VERSION,
};
pub use scoring::{
    score_only, InferenceCount, InferenceCounter, ModelGroup, ModelSet, ScoreOptions, ScoreOutput,
};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{write_scores_csv, CohortScores, Method};
use crate::error::{Error, Result, StageContext};
use crate::eval::{
    abnormal_classes, accuracy, adjacency_rate, agreement_analysis, bootstrap_ci,
    carcinoma_classes, class_auc, confidence_by_class, confusion_matrix, median_split_report,
    npv, overall_auc, selective_curve, weighted_accuracy, AgreementStats, LabeledPrediction,
    SelectiveCurve, StratifiedReport,
};
use crate::losses::{CostMatrix, CostMatrixKind, LossConfig};
use crate::model::{forward, train, write_bag_dir, ArchitectureConfig, Bag, Dropout, RiskVector};
use crate::numerics::{coordinate_mean, derive_seed, streams, RandomStream};
use crate::synthdata::{
    generate, manifest_rows, simulate_raters, stratified_holdout, stratified_kfold, write_manifest,
};

/// Seed of member `member` of fold `fold`.
pub fn member_seed(master_seed: u64, fold: usize, member: usize) -> u64 {
    derive_seed(master_seed, &[streams::INIT, fold as u64, member as u64])
}

pub fn seed_echo(master: u64) -> SeedEcho {
    SeedEcho {
        master,
        generator: derive_seed(master, &[streams::DATA]),
        raters: derive_seed(master, &[streams::RATERS]),
        split: derive_seed(master, &[streams::SPLIT]),
        scoring: derive_seed(master, &[streams::MC]),
        bootstrap: derive_seed(master, &[streams::BOOTSTRAP]),
        baseline: derive_seed(master, &[streams::BASELINE]),
    }
}

/// Output of [`train_ensemble`].
#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub models: ModelSet,
    pub summaries: Vec<ModelSummary>,
}

struct Job {
    role: &'static str,
    fold: usize,
    member: usize,
    loss: LossConfig,
}

/// Trains `ensemble_size` seed variants on each of `folds` stratified
/// folds of `bags`. The member with the lowest validation loss in each fold
/// is designated for MC dropout.
pub fn train_ensemble(
    bags: &[&Bag],
    arch: &ArchitectureConfig,
    schedule: &TrainingSchedule,
    loss: &LossConfig,
    folds: usize,
    ensemble_size: usize,
    master_seed: u64,
) -> Result<TrainedEnsemble> {
    let jobs: Vec<Job> = (0..folds)
        .flat_map(|fold| {
            (0..ensemble_size).map(move |member| Job {
                role: "sosr",
                fold,
                member,
                loss: loss.clone(),
            })
        })
        .collect();
    let trained = train_jobs(bags, arch, schedule, &jobs, folds, master_seed)?;
    let mut groups: Vec<ModelGroup> = Vec::with_capacity(folds);
    let mut summaries = Vec::with_capacity(jobs.len());
    for chunk in trained.chunks(ensemble_size) {
        let designated = chunk
            .iter()
            .enumerate()
            .fold(0, |best, (i, (_, s))| if s.best_val_loss < chunk[best].1.best_val_loss { i } else { best });
        groups.push(ModelGroup {
            members: chunk.iter().map(|(p, _)| p.clone()).collect(),
            designated,
        });
        summaries.extend(chunk.iter().enumerate().map(|(i, (_, s))| ModelSummary {
            designated: i == designated,
            ..s.clone()
        }));
    }
    Ok(TrainedEnsemble {
        models: ModelSet { groups },
        summaries,
    })
}

fn train_jobs(
    bags: &[&Bag],
    arch: &ArchitectureConfig,
    schedule: &TrainingSchedule,
    jobs: &[Job],
    folds: usize,
    master_seed: u64,
) -> Result<Vec<(crate::model::AttentionMilParameters, ModelSummary)>> {
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let splits = stratified_kfold(&labels, folds, derive_seed(master_seed, &[streams::SPLIT]))?;
    jobs.par_iter()
        .map(|job| {
            let split = &splits[job.fold];
            let train_bags: Vec<&Bag> = split.train.iter().map(|&i| bags[i]).collect();
            let val_bags: Vec<&Bag> = split.val.iter().map(|&i| bags[i]).collect();
            let seed = member_seed(master_seed, job.fold, job.member);
            let cfg = schedule.train_config(job.loss.clone(), seed);
            let out = train(&train_bags, &val_bags, arch, &cfg)?;
            let best_val_loss = out.history[out.best_epoch - 1].val_loss;
            let summary = ModelSummary {
                role: job.role.into(),
                fold: job.fold,
                member: job.member,
                seed,
                epochs_run: out.history.len(),
                best_epoch: out.best_epoch,
                best_val_loss,
                designated: false,
            };
            Ok((out.params, summary))
        })
        .collect()
}

/// Settings for [`evaluate_cohort`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    pub curve_step: usize,
    pub random_trials: usize,
    pub bootstrap: usize,
    pub baseline_seed: u64,
    pub bootstrap_seed: u64,
}

/// Everything computed from predictions and confidences alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEvaluation {
    pub metrics: CohortMetrics,
    pub selective_curves: Vec<SelectiveCurve>,
    pub stratified: StratifiedReport,
    pub agreement: Vec<AgreementStats>,
    pub confidence_by_class: Vec<MethodDistribution>,
}

pub fn cohort_metrics(
    preds: &[LabeledPrediction],
    cost: &CostMatrix,
    bootstrap: usize,
    rng: &mut RandomStream,
) -> Result<CohortMetrics> {
    let n = cost.n_classes();
    let overall = bootstrap_ci(
        preds.len(),
        |idx| {
            let sample: Vec<LabeledPrediction> = idx.iter().map(|&i| preds[i].clone()).collect();
            overall_auc(&sample).ok()
        },
        bootstrap,
        rng,
    )?;
    Ok(CohortMetrics {
        n_bags: preds.len(),
        overall_auc: overall,
        class_auc: (0..n).map(|k| class_auc(preds, k).ok()).collect(),
        accuracy: accuracy(preds),
        weighted_accuracy: weighted_accuracy(preds, cost)?,
        adjacency_rate: adjacency_rate(preds)?,
        npv_carcinoma: npv(preds, &carcinoma_classes(n)),
        npv_abnormal: npv(preds, &abnormal_classes(n)),
        confusion_matrix: confusion_matrix(preds, n),
    })
}

/// Selective curves, median-split tables, per-class confidence summaries
/// and, when rater agreement is known and both groups are present,
/// agreement statistics.
pub fn evaluate_cohort(
    preds: &[LabeledPrediction],
    scores: &[CohortScores],
    agreement: Option<&[bool]>,
    cost: &CostMatrix,
    settings: &EvaluationSettings,
) -> Result<CohortEvaluation> {
    let mut boot = RandomStream::new(settings.bootstrap_seed, streams::BOOTSTRAP);
    let metrics = cohort_metrics(preds, cost, settings.bootstrap, &mut boot.child(0))?;
    let selective_curves = scores
        .iter()
        .map(|s| {
            let mut rng =
                RandomStream::new(settings.baseline_seed, streams::BASELINE).child(s.method as u64);
            selective_curve(preds, s, settings.curve_step, settings.random_trials, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let stratified = median_split_report(preds, scores, settings.bootstrap, &mut boot)?;
    let agreement = match agreement {
        Some(flags) if flags.contains(&true) && flags.contains(&false) => scores
            .iter()
            .map(|s| agreement_analysis(s, flags))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let confidence_by_class = scores
        .iter()
        .map(|s| {
            Ok(MethodDistribution {
                method: s.method,
                classes: confidence_by_class(preds, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CohortEvaluation {
        metrics,
        selective_curves,
        stratified,
        agreement,
        confidence_by_class,
    })
}

fn group_predictions(models: &ModelSet, bags: &[&Bag]) -> Result<Vec<LabeledPrediction>> {
    bags.iter()
        .map(|bag| {
            let risks = models
                .groups
                .iter()
                .flat_map(|g| &g.members)
                .map(|m| forward(m, bag, Dropout::Off).map(|(r, _)| r.0))
                .collect::<Result<Vec<_>>>()?;
            LabeledPrediction::new(bag.bag_id.clone(), bag.label, RiskVector(coordinate_mean(&risks)?))
        })
        .collect()
}

fn comparison_summary(
    name: &str,
    loss: &LossConfig,
    preds: &[LabeledPrediction],
    cost: &CostMatrix,
) -> Result<ComparisonSummary> {
    Ok(ComparisonSummary {
        name: name.into(),
        loss: loss.name().into(),
        overall_auc: overall_auc(preds).ok(),
        accuracy: accuracy(preds),
        weighted_accuracy: weighted_accuracy(preds, cost)?,
        adjacency_rate: adjacency_rate(preds)?,
        confusion_matrix: confusion_matrix(preds, cost.n_classes()),
    })
}

/// A completed experiment with the artefacts needed to rescore it.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: EvaluationReport,
    pub models: ModelSet,
    pub test_bags: Vec<Bag>,
}

/// Runs the full experiment. When `cfg.output_dir` is set, inputs are
/// written before training starts and the report bundle at the end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvaluationReport> {
    run_experiment_with(cfg, cfg.output_dir.as_deref(), &|_| {}).map(|r| r.report)
}

/// [`run_experiment`] writing to `out_dir` instead of `cfg.output_dir`,
/// with a progress callback.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<ExperimentRun> {
    cfg.validate().stage("config")?;
    let seeds = seed_echo(cfg.master_seed);

    progress("generating data");
    let dataset = generate(&cfg.generator).stage("generate")?;
    let reviews = simulate_raters(&dataset, &cfg.rater).stage("generate")?;
    let labels = dataset.labels();
    let (pool, test) =
        stratified_holdout(&labels, cfg.test_fraction, seeds.split).stage("split")?;
    let pool_bags: Vec<&Bag> = pool.iter().map(|&i| &dataset.bags[i]).collect();
    let test_bags: Vec<Bag> = test.iter().map(|&i| dataset.bags[i].clone()).collect();
    let test_refs: Vec<&Bag> = test_bags.iter().collect();

    if let Some(dir) = out_dir {
        report::write_text(&dir.join("config.cfg"), &cfg.to_text()).stage("write")?;
        let rows = manifest_rows(&dataset, &reviews);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("write")?;
        write_manifest(&dir.join("manifest.csv"), &rows).stage("write")?;
        let split = SplitRecord {
            test: test_bags.iter().map(|b| b.bag_id.clone()).collect(),
            train_pool: pool_bags.iter().map(|b| b.bag_id.clone()).collect(),
        };
        report::write_json(&dir.join("split.json"), &split).stage("write")?;
        write_bag_dir(&dir.join("test_bags"), &test_bags).stage("write")?;
    }

    let cost = cfg.cost_table().stage("config")?;
    let loss = LossConfig::sosr(cost.clone());
    progress(&format!(
        "training {} folds x {} members",
        cfg.folds, cfg.ensemble_size
    ));
    let ensemble = train_ensemble(
        &pool_bags,
        &cfg.arch,
        &cfg.train,
        &loss,
        cfg.folds,
        cfg.ensemble_size,
        cfg.master_seed,
    )
    .stage("train")?;
    if let (Some(dir), true) = (out_dir, cfg.save_checkpoints) {
        ensemble.models.save(&dir.join("checkpoints")).stage("write")?;
    }

    progress("scoring test bags");
    let opts = ScoreOptions {
        mc_samples: cfg.mc_samples,
        seed: seeds.scoring,
        spread_reduction: cfg.spread_reduction,
    };
    let scored = score_only(&ensemble.models, &test_bags, &Method::ALL, &opts).stage("score")?;

    progress("evaluating");
    let agreement: Vec<bool> = test.iter().map(|&i| reviews.agreement[i]).collect();
    let settings = EvaluationSettings {
        curve_step: cfg.curve_step,
        random_trials: cfg.random_trials,
        bootstrap: cfg.bootstrap,
        baseline_seed: seeds.baseline,
        bootstrap_seed: seeds.bootstrap,
    };
    let evaluation = evaluate_cohort(
        &scored.predictions,
        &scored.scores,
        Some(&agreement),
        &cost,
        &settings,
    )
    .stage("evaluate")?;

    progress("comparison models");
    let mut models = ensemble.summaries.clone();
    let single = ModelSet {
        groups: ensemble
            .models
            .groups
            .iter()
            .map(|g| ModelGroup {
                members: vec![g.members[0].clone()],
                designated: 0,
            })
            .collect(),
    };
    let mut comparisons = vec![comparison_summary(
        "sosr_single",
        &loss,
        &group_predictions(&single, &test_refs).stage("compare")?,
        &cost,
    )
    .stage("compare")?];
    let mut alternatives = Vec::new();
    if cfg.compare_cross_entropy {
        alternatives.push(("cross_entropy", LossConfig::CrossEntropy));
    }
    if cfg.compare_linear_cost {
        let linear = CostMatrix::builtin(CostMatrixKind::Linear, cfg.generator.n_classes)
            .stage("compare")?;
        alternatives.push(("sosr_linear", LossConfig::sosr(linear)));
    }
    for (name, alt_loss) in alternatives {
        let jobs: Vec<Job> = (0..cfg.folds)
            .map(|fold| Job {
                role: name,
                fold,
                member: 0,
                loss: alt_loss.clone(),
            })
            .collect();
        let trained = train_jobs(&pool_bags, &cfg.arch, &cfg.train, &jobs, cfg.folds, cfg.master_seed)
            .stage("compare")?;
        let set = ModelSet {
            groups: trained
                .iter()
                .map(|(p, _)| ModelGroup {
                    members: vec![p.clone()],
                    designated: 0,
                })
                .collect(),
        };
        models.extend(trained.into_iter().map(|(_, s)| s));
        let preds = group_predictions(&set, &test_refs).stage("compare")?;
        comparisons.push(comparison_summary(name, &alt_loss, &preds, &cost).stage("compare")?);
    }

    let value_of = |method: Method, i: usize| {
        scored
            .scores_for(method)
            .map(|s| s.scores[i].value)
            .unwrap_or(f64::NAN)
    };
    let test_records = scored
        .predictions
        .iter()
        .zip(&test)
        .enumerate()
        .map(|(i, (p, &di))| TestBagRecord {
            bag_id: p.bag_id.clone(),
            true_class: p.true_class,
            predicted_class: p.predicted_class,
            difficulty: dataset.difficulty[di],
            rater1: reviews.rater1[di],
            rater2: reviews.rater2[di],
            agreement: reviews.agreement[di],
            risk: p.risk.clone(),
            probs: p.probs.clone(),
            confidence: MethodValues {
                grade_sensitive: value_of(Method::GradeSensitive, i),
                mc_dropout: value_of(Method::McDropout, i),
                deep_ensemble: value_of(Method::DeepEnsemble, i),
                raw_risk: value_of(Method::RawRisk, i),
            },
        })
        .collect();
    let n_classes = cfg.generator.n_classes;
    let data = DataSummary {
        n_bags: dataset.bags.len(),
        n_train_pool: pool.len(),
        n_test: test.len(),
        test_class_counts: (0..n_classes)
            .map(|c| test.iter().filter(|&&i| labels[i] == c).count())
            .collect(),
        test_mean_difficulty: test.iter().map(|&i| dataset.difficulty[i]).sum::<f64>()
            / test.len() as f64,
        test_disagreement_rate: agreement.iter().filter(|&&a| !a).count() as f64
            / test.len() as f64,
    };
    let report = EvaluationReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        config: cfg.clone(),
        seeds,
        data,
        models,
        metrics: evaluation.metrics,
        inference: scored.inference.clone(),
        selective_curves: evaluation.selective_curves,
        stratified: evaluation.stratified,
        agreement: evaluation.agreement,
        confidence_by_class: evaluation.confidence_by_class,
        comparisons,
        test_bags: test_records,
    };

    if let Some(dir) = out_dir {
        progress("writing report");
        write_report_bundle(dir, &report, &scored).stage("write")?;
    }
    Ok(ExperimentRun {
        report,
        models: ensemble.models,
        test_bags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitRecord {
    test: Vec<String>,
    train_pool: Vec<String>,
}

/// Writes `report.json` and the CSV tables.
pub fn write_report_bundle(dir: &Path, report: &EvaluationReport, scored: &ScoreOutput) -> Result<()> {
    report::write_text(&dir.join("report.json"), &report.to_json()?)?;
    write_predictions_csv(&dir.join("predictions.csv"), &scored.predictions)?;
    write_scores_csv(
        &dir.join("scores.csv"),
        &score_rows(&scored.predictions, &scored.scores),
    )?;
    write_curves_csv(&dir.join("curves.csv"), &report.selective_curves)?;
    write_threshold_csv(&dir.join("thresholds.csv"), &report.selective_curves)?;
    write_stratified_csv(&dir.join("stratified.csv"), &report.stratified)?;
    write_agreement_csv(&dir.join("agreement.csv"), &report.agreement)?;
    report::write_json(&dir.join("inference.json"), &report.inference)
}

/// Provenance written next to every command's outputs. Kept apart from the
/// report so that the report stays reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub config: String,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
}

impl RunInfo {
    pub fn write(&self, dir: &Path) -> Result<()> {
        report::write_json(&dir.join("run-info.json"), self)
    }
}
