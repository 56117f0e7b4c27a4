//! Inference over trained model sets, with counted forward passes.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{
    cohort_from_spread, grade_sensitive_cohort, raw_risk_confidence, spread_statistic,
    CohortScores, Method, SpreadReduction,
};
use crate::error::{Error, Result};
use crate::eval::LabeledPrediction;
use crate::model::{
    forward, load_checkpoint, mc_inference, save_checkpoint, AttentionMilParameters, Bag, Dropout,
    RiskVector,
};
use crate::numerics::{coordinate_mean, streams, RandomStream};

/// Members trained on one fold. `designated` is the member used for MC
/// dropout.
#[derive(Debug, Clone)]
pub struct ModelGroup {
    pub members: Vec<AttentionMilParameters>,
    pub designated: usize,
}

/// One group per cross-validation fold.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub groups: Vec<ModelGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupIndex {
    members: Vec<String>,
    designated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelIndex {
    format: String,
    groups: Vec<GroupIndex>,
}

const MODEL_INDEX: &str = "index.json";
const MODEL_INDEX_FORMAT: &str = "gradeconf-models";

impl ModelSet {
    /// A single group holding `members`, the first of which is designated.
    pub fn single_group(members: Vec<AttentionMilParameters>) -> Self {
        Self {
            groups: vec![ModelGroup {
                members,
                designated: 0,
            }],
        }
    }

    pub fn n_models(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }

    pub fn min_group_size(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).min().unwrap_or(0)
    }

    fn first(&self) -> Result<&AttentionMilParameters> {
        self.groups
            .first()
            .and_then(|g| g.members.first())
            .ok_or_else(|| Error::contract("model set is empty"))
    }

    pub fn validate(&self) -> Result<()> {
        let arch = &self.first()?.architecture;
        for (gi, g) in self.groups.iter().enumerate() {
            if g.members.is_empty() {
                return Err(Error::contract(format!("model group {gi} is empty")));
            }
            if g.designated >= g.members.len() {
                return Err(Error::contract(format!(
                    "model group {gi} designates member {} of {}",
                    g.designated,
                    g.members.len()
                )));
            }
            for m in &g.members {
                m.ensure_compatible(arch)?;
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> Result<usize> {
        Ok(self.first()?.architecture.n_classes)
    }

    /// Writes `fold{g}_member{m}.json` checkpoints and an index.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = ModelIndex {
            format: MODEL_INDEX_FORMAT.into(),
            groups: Vec::new(),
        };
        for (gi, g) in self.groups.iter().enumerate() {
            let mut names = Vec::new();
            for (mi, m) in g.members.iter().enumerate() {
                let name = format!("fold{gi}_member{mi}.json");
                save_checkpoint(m, &dir.join(&name))?;
                names.push(name);
            }
            index.groups.push(GroupIndex {
                members: names,
                designated: g.designated,
            });
        }
        let path = dir.join(MODEL_INDEX);
        let text = serde_json::to_string_pretty(&index).map_err(|e| Error::format("model index", e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_INDEX);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: ModelIndex = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("model index {}", path.display()), e))?;
        if index.format != MODEL_INDEX_FORMAT {
            return Err(Error::format(
                format!("model index {}", path.display()),
                format!("unexpected format `{}`", index.format),
            ));
        }
        let groups = index
            .groups
            .into_iter()
            .map(|g| {
                let members = g
                    .members
                    .iter()
                    .map(|name| load_checkpoint(&dir.join(name)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ModelGroup {
                    members,
                    designated: g.designated,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let set = Self { groups };
        set.validate()?;
        Ok(set)
    }
}

/// Counts forward passes through a network.
#[derive(Debug, Default)]
pub struct InferenceCounter(AtomicU64);

impl InferenceCounter {
    pub fn add(&self, passes: u64) {
        self.0.fetch_add(passes, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Forward passes spent on one confidence method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceCount {
    pub method: Method,
    pub forward_passes: u64,
    pub bags: usize,
    /// Number of scoring units the passes are spread over.
    pub units: usize,
    /// `model` (one trained network) or `group` (one fold's members).
    pub unit: String,
    pub passes_per_bag_per_unit: f64,
}

impl InferenceCount {
    fn new(method: Method, forward_passes: u64, bags: usize, units: usize, unit: &str) -> Self {
        Self {
            method,
            forward_passes,
            bags,
            units,
            unit: unit.into(),
            passes_per_bag_per_unit: forward_passes as f64 / (bags * units) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub mc_samples: usize,
    pub seed: u64,
    pub spread_reduction: SpreadReduction,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            mc_samples: 50,
            seed: 0,
            spread_reduction: SpreadReduction::MeanOverClasses,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOutput {
    /// Risk averaged over each group's members, then over groups.
    pub predictions: Vec<LabeledPrediction>,
    /// In the order the methods were requested.
    pub scores: Vec<CohortScores>,
    pub inference: Vec<InferenceCount>,
}

impl ScoreOutput {
    pub fn scores_for(&self, method: Method) -> Option<&CohortScores> {
        self.scores.iter().find(|s| s.method == method)
    }
}

fn counted_forward(
    params: &AttentionMilParameters,
    bag: &Bag,
    counter: &InferenceCounter,
) -> Result<RiskVector> {
    counter.add(1);
    forward(params, bag, Dropout::Off).map(|(r, _)| r)
}

/// Scores `bags` with the requested confidence methods without training.
///
/// Grade-sensitive and raw-risk scores reuse the deterministic passes that
/// produce the predictions. MC dropout adds `mc_samples` stochastic passes
/// per bag on each group's designated member. Deep ensembles need at least
/// two members in every group.
pub fn score_only(
    models: &ModelSet,
    bags: &[Bag],
    methods: &[Method],
    opts: &ScoreOptions,
) -> Result<ScoreOutput> {
    models.validate()?;
    if bags.is_empty() {
        return Err(Error::contract("no bags to score"));
    }
    if methods.contains(&Method::DeepEnsemble) && models.min_group_size() < 2 {
        return Err(Error::contract(format!(
            "deep ensemble scoring needs at least 2 models per group (D >= 2), got {}",
            models.min_group_size()
        )));
    }
    let n_classes = models.n_classes()?;
    let first = models.first()?;
    for bag in bags {
        if bag.label >= n_classes {
            return Err(Error::contract(format!(
                "bag `{}` has label {} but the models predict {n_classes} classes",
                bag.bag_id, bag.label
            )));
        }
        if bag.feature_dim() != first.architecture.input_dim {
            return Err(Error::DimensionMismatch {
                context: "bag feature width vs model input",
                expected: first.architecture.input_dim,
                found: bag.feature_dim(),
            });
        }
    }

    let deterministic = InferenceCounter::default();
    // [bag][group][member]
    let member_risks: Vec<Vec<Vec<RiskVector>>> = bags
        .par_iter()
        .map(|bag| {
            models
                .groups
                .iter()
                .map(|g| {
                    g.members
                        .iter()
                        .map(|m| counted_forward(m, bag, &deterministic))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let predictions = bags
        .iter()
        .zip(&member_risks)
        .map(|(bag, groups)| {
            let group_means = groups
                .iter()
                .map(|members| coordinate_mean(members))
                .collect::<Result<Vec<_>>>()?;
            let risk = RiskVector(coordinate_mean(&group_means)?);
            LabeledPrediction::new(bag.bag_id.clone(), bag.label, risk)
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = bags.iter().map(|b| b.bag_id.clone()).collect();
    let risks: Vec<(String, RiskVector)> = predictions
        .iter()
        .map(|p| (p.bag_id.clone(), p.risk.clone()))
        .collect();

    let n_bags = bags.len();
    let n_groups = models.groups.len();
    let mut scores = Vec::new();
    let mut inference = Vec::new();
    for &method in methods {
        match method {
            Method::GradeSensitive => {
                scores.push(grade_sensitive_cohort(&risks)?);
                inference.push(InferenceCount::new(
                    method,
                    deterministic.get(),
                    n_bags,
                    models.n_models(),
                    "model",
                ));
            }
            Method::RawRisk => {
                scores.push(raw_risk_confidence(&risks)?);
                inference.push(InferenceCount::new(
                    method,
                    deterministic.get(),
                    n_bags,
                    models.n_models(),
                    "model",
                ));
            }
            Method::DeepEnsemble => {
                let spreads = member_risks
                    .iter()
                    .map(|groups| mean_group_spread(groups, opts.spread_reduction))
                    .collect::<Result<Vec<_>>>()?;
                scores.push(cohort_from_spread(method, ids.clone(), &spreads)?);
                inference.push(InferenceCount::new(
                    method,
                    deterministic.get(),
                    n_bags,
                    n_groups,
                    "group",
                ));
            }
            Method::McDropout => {
                let counter = InferenceCounter::default();
                let root = RandomStream::new(opts.seed, streams::MC);
                let spreads = bags
                    .par_iter()
                    .enumerate()
                    .map(|(bi, bag)| {
                        let samples = models
                            .groups
                            .iter()
                            .enumerate()
                            .map(|(gi, g)| {
                                let mut rng = root.child(gi as u64).child(bi as u64);
                                let s = mc_inference(
                                    &g.members[g.designated],
                                    bag,
                                    opts.mc_samples,
                                    &mut rng,
                                )?;
                                counter.add(s.len() as u64);
                                Ok(s)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        mean_group_spread(&samples, opts.spread_reduction)
                    })
                    .collect::<Result<Vec<_>>>()?;
                scores.push(cohort_from_spread(method, ids.clone(), &spreads)?);
                inference.push(InferenceCount::new(method, counter.get(), n_bags, n_groups, "group"));
            }
        }
    }
    Ok(ScoreOutput {
        predictions,
        scores,
        inference,
    })
}

fn mean_group_spread(groups: &[Vec<RiskVector>], reduction: SpreadReduction) -> Result<f64> {
    let spreads = groups
        .iter()
        .map(|s| spread_statistic(s, reduction))
        .collect::<Result<Vec<_>>>()?;
    Ok(spreads.iter().sum::<f64>() / spreads.len() as f64)
}
