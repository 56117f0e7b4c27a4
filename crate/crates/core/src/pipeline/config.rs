//! Experiment configuration and its text format.
//!
//! The format is line based: `[section]` headers followed by `key = value`
//! lines; `#` starts a comment. Keys before the first header belong to
//! `[experiment]`. Every key is optional and unknown keys are rejected.
//!
//! ```text
//! [experiment]   master_seed folds ensemble_size mc_samples bootstrap
//!                cost_matrix test_fraction curve_step random_trials
//!                spread_reduction compare_cross_entropy compare_linear_cost
//!                save_checkpoints output_dir
//! [generator]    n_classes feature_dim tiles_min tiles_max bags_per_class
//!                separation off_axis_offset tile_noise lesion_fraction
//!                lesion_fraction_max ambiguity coexisting_rate
//! [model]        reduction_width attention_width classifier_widths
//!                dropout_rate
//! [train]        epochs learning_rate rmsprop_momentum rmsprop_decay
//!                early_stopping_patience
//! [raters]       boundary_confusion
//! ```
//!
//! `classifier_widths` is a comma-separated list. The model input width
//! and class count follow the generator, and the generator and rater seeds
//! are derived from `master_seed`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::SpreadReduction;
use crate::error::{Error, Result};
use crate::losses::{CostMatrix, CostMatrixKind, LossConfig};
use crate::model::{ArchitectureConfig, TrainConfig};
use crate::numerics::{derive_seed, streams};
use crate::synthdata::{GeneratorConfig, RaterConfig};

/// Optimiser and stopping settings shared by every model of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub rmsprop_momentum: f64,
    pub rmsprop_decay: f64,
    pub early_stopping_patience: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            rmsprop_momentum: t.rmsprop_momentum,
            rmsprop_decay: t.rmsprop_decay,
            early_stopping_patience: t.early_stopping_patience,
        }
    }
}

impl TrainingSchedule {
    pub fn train_config(&self, loss: LossConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            rmsprop_momentum: self.rmsprop_momentum,
            rmsprop_decay: self.rmsprop_decay,
            early_stopping_patience: self.early_stopping_patience,
            loss,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub generator: GeneratorConfig,
    pub arch: ArchitectureConfig,
    pub train: TrainingSchedule,
    pub rater: RaterConfig,
    pub folds: usize,
    pub ensemble_size: usize,
    pub mc_samples: usize,
    pub cost_matrix: CostMatrixKind,
    pub bootstrap: usize,
    /// Stratified fraction of bags held out as the test cohort.
    pub test_fraction: f64,
    pub curve_step: usize,
    pub random_trials: usize,
    pub spread_reduction: SpreadReduction,
    pub compare_cross_entropy: bool,
    pub compare_linear_cost: bool,
    pub save_checkpoints: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            master_seed: 0,
            generator: GeneratorConfig::default(),
            arch: ArchitectureConfig::default(),
            train: TrainingSchedule::default(),
            rater: RaterConfig::default(),
            folds: 5,
            ensemble_size: 5,
            mc_samples: 50,
            cost_matrix: CostMatrixKind::Custom,
            bootstrap: 1000,
            test_fraction: 0.15,
            curve_step: 1,
            random_trials: 100,
            spread_reduction: SpreadReduction::MeanOverClasses,
            compare_cross_entropy: true,
            compare_linear_cost: false,
            save_checkpoints: true,
            output_dir: None,
        };
        cfg.sync();
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("invalid value `{value}` for `{key}`: expected a boolean"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Re-derives the values that follow from other settings.
    pub fn sync(&mut self) {
        self.arch.input_dim = self.generator.feature_dim;
        self.arch.n_classes = self.generator.n_classes;
        self.generator.seed = derive_seed(self.master_seed, &[streams::DATA]);
        self.rater.seed = derive_seed(self.master_seed, &[streams::RATERS]);
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self.sync();
        self
    }

    /// Sets one `section.key` value.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match (section, key) {
            ("experiment", "master_seed") => self.master_seed = parse(k, value)?,
            ("experiment", "folds") => self.folds = parse(k, value)?,
            ("experiment", "ensemble_size") => self.ensemble_size = parse(k, value)?,
            ("experiment", "mc_samples") => self.mc_samples = parse(k, value)?,
            ("experiment", "bootstrap") => self.bootstrap = parse(k, value)?,
            ("experiment", "cost_matrix") => self.cost_matrix = value.parse()?,
            ("experiment", "test_fraction") => self.test_fraction = parse(k, value)?,
            ("experiment", "curve_step") => self.curve_step = parse(k, value)?,
            ("experiment", "random_trials") => self.random_trials = parse(k, value)?,
            ("experiment", "spread_reduction") => self.spread_reduction = value.parse()?,
            ("experiment", "compare_cross_entropy") => {
                self.compare_cross_entropy = parse_bool(k, value)?
            }
            ("experiment", "compare_linear_cost") => {
                self.compare_linear_cost = parse_bool(k, value)?
            }
            ("experiment", "save_checkpoints") => self.save_checkpoints = parse_bool(k, value)?,
            ("experiment", "output_dir") => {
                self.output_dir = (!value.is_empty()).then(|| PathBuf::from(value))
            }
            ("generator", "n_classes") => self.generator.n_classes = parse(k, value)?,
            ("generator", "feature_dim") => self.generator.feature_dim = parse(k, value)?,
            ("generator", "tiles_min") => self.generator.tiles_min = parse(k, value)?,
            ("generator", "tiles_max") => self.generator.tiles_max = parse(k, value)?,
            ("generator", "bags_per_class") => self.generator.bags_per_class = parse(k, value)?,
            ("generator", "separation") => self.generator.separation = parse(k, value)?,
            ("generator", "off_axis_offset") => self.generator.off_axis_offset = parse(k, value)?,
            ("generator", "tile_noise") => self.generator.tile_noise = parse(k, value)?,
            ("generator", "lesion_fraction") => self.generator.lesion_fraction = parse(k, value)?,
            ("generator", "coexisting_rate") => self.generator.coexisting_rate = parse(k, value)?,
            ("generator", "lesion_fraction_max") => {
                self.generator.lesion_fraction_max = parse(k, value)?
            }
            ("generator", "ambiguity") => self.generator.ambiguity = parse(k, value)?,
            ("model", "reduction_width") => self.arch.reduction_width = parse(k, value)?,
            ("model", "attention_width") => self.arch.attention_width = parse(k, value)?,
            ("model", "classifier_widths") => self.arch.classifier_widths = parse_list(k, value)?,
            ("model", "dropout_rate") => self.arch.dropout_rate = parse(k, value)?,
            ("train", "epochs") => self.train.epochs = parse(k, value)?,
            ("train", "learning_rate") => self.train.learning_rate = parse(k, value)?,
            ("train", "rmsprop_momentum") => self.train.rmsprop_momentum = parse(k, value)?,
            ("train", "rmsprop_decay") => self.train.rmsprop_decay = parse(k, value)?,
            ("train", "early_stopping_patience") => {
                self.train.early_stopping_patience = parse(k, value)?
            }
            ("raters", "boundary_confusion") => self.rater.boundary_confusion = parse(k, value)?,
            _ => return Err(Error::config(format!("unknown configuration key `{full}`"))),
        }
        self.sync();
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| {
            Error::config(format!("override key `{}` must be section.key", path.trim()))
        })?;
        self.set(section.trim(), key.trim(), value)
    }

    /// Applies the text format on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::from("experiment");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| Error::config(format!("line {}: {e}", lineno + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at(Error::config(format!("malformed section header `{line}`"))))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(Error::config(format!("expected key = value, got `{line}`"))))?;
            self.set(&section, key.trim(), value).map_err(at)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Renders every settable key; `from_text(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let a = &self.arch;
        let t = &self.train;
        let widths: Vec<String> = a.classifier_widths.iter().map(|w| w.to_string()).collect();
        let spread = match self.spread_reduction {
            SpreadReduction::MeanOverClasses => "mean_over_classes",
            SpreadReduction::PredictedClass => "predicted_class",
        };
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "folds = {}", self.folds);
        let _ = writeln!(s, "ensemble_size = {}", self.ensemble_size);
        let _ = writeln!(s, "mc_samples = {}", self.mc_samples);
        let _ = writeln!(s, "bootstrap = {}", self.bootstrap);
        let _ = writeln!(s, "cost_matrix = {}", self.cost_matrix);
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);
        let _ = writeln!(s, "curve_step = {}", self.curve_step);
        let _ = writeln!(s, "random_trials = {}", self.random_trials);
        let _ = writeln!(s, "spread_reduction = {spread}");
        let _ = writeln!(s, "compare_cross_entropy = {}", self.compare_cross_entropy);
        let _ = writeln!(s, "compare_linear_cost = {}", self.compare_linear_cost);
        let _ = writeln!(s, "save_checkpoints = {}", self.save_checkpoints);
        if let Some(dir) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", dir.display());
        }
        let _ = writeln!(s, "\n[generator]");
        let _ = writeln!(s, "n_classes = {}", g.n_classes);
        let _ = writeln!(s, "feature_dim = {}", g.feature_dim);
        let _ = writeln!(s, "tiles_min = {}", g.tiles_min);
        let _ = writeln!(s, "tiles_max = {}", g.tiles_max);
        let _ = writeln!(s, "bags_per_class = {}", g.bags_per_class);
        let _ = writeln!(s, "separation = {}", g.separation);
        let _ = writeln!(s, "off_axis_offset = {}", g.off_axis_offset);
        let _ = writeln!(s, "tile_noise = {}", g.tile_noise);
        let _ = writeln!(s, "lesion_fraction = {}", g.lesion_fraction);
        let _ = writeln!(s, "lesion_fraction_max = {}", g.lesion_fraction_max);
        let _ = writeln!(s, "ambiguity = {}", g.ambiguity);
        let _ = writeln!(s, "coexisting_rate = {}", g.coexisting_rate);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "reduction_width = {}", a.reduction_width);
        let _ = writeln!(s, "attention_width = {}", a.attention_width);
        let _ = writeln!(s, "classifier_widths = {}", widths.join(","));
        let _ = writeln!(s, "dropout_rate = {}", a.dropout_rate);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "rmsprop_momentum = {}", t.rmsprop_momentum);
        let _ = writeln!(s, "rmsprop_decay = {}", t.rmsprop_decay);
        let _ = writeln!(s, "early_stopping_patience = {}", t.early_stopping_patience);
        let _ = writeln!(s, "\n[raters]");
        let _ = writeln!(s, "boundary_confusion = {}", self.rater.boundary_confusion);
        s
    }

    pub fn cost_table(&self) -> Result<CostMatrix> {
        CostMatrix::builtin(self.cost_matrix, self.generator.n_classes)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.arch.validate()?;
        self.train.train_config(LossConfig::CrossEntropy, 0).validate()?;
        self.cost_table()?;
        if !(0.0..1.0).contains(&self.rater.boundary_confusion) {
            return Err(Error::config("boundary_confusion must lie in [0, 1)"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds must be >= 2"));
        }
        if self.ensemble_size < 2 {
            return Err(Error::config("ensemble_size must be >= 2"));
        }
        if self.mc_samples < 2 {
            return Err(Error::config("mc_samples must be >= 2"));
        }
        if self.bootstrap < 100 {
            return Err(Error::config("bootstrap must be >= 100"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie in (0, 1)"));
        }
        if self.curve_step == 0 {
            return Err(Error::config("curve_step must be >= 1"));
        }
        if self.random_trials == 0 {
            return Err(Error::config("random_trials must be >= 1"));
        }
        let expected = (self.generator.feature_dim, self.generator.n_classes);
        if (self.arch.input_dim, self.arch.n_classes) != expected {
            return Err(Error::config("model input width and class count must follow the generator"));
        }
        Ok(())
    }
}
