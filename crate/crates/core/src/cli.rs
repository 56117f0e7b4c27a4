//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 when a command fails.
//! Outputs go to `--out`, or to `<root>/<command>` where `<root>` is
//! `$GRADECONF_OUT` (default `gradeconf-out`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::confidence::{read_scores_csv, write_scores_csv, Method};
use crate::error::{Error, Result, StageContext};
use crate::model::{load_checkpoint, read_bag_dir, write_bag_dir, Bag};
use crate::pipeline::{
    cohorts_from_rows, evaluate_cohort, read_predictions_csv, run_experiment_with, score_only,
    score_rows, seed_echo, train_ensemble, write_agreement_csv, write_curves_csv,
    write_predictions_csv, write_stratified_csv, write_threshold_csv, EvaluationSettings,
    ExperimentConfig, ModelSet, RunInfo, ScoreOptions,
};
use crate::losses::LossConfig;
use crate::synthdata::{generate, manifest_rows, read_manifest, simulate_raters, write_manifest};

pub const OUTPUT_ROOT_ENV: &str = "GRADECONF_OUT";

#[derive(Debug, Parser)]
#[command(name = "gradeconf", version, about = "Grade-sensitive confidence for ordinal MIL grading")]
struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Maximum number of concurrent trainings and scoring threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; wins over the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with rater reviews.
    Synthesize(ConfigArgs),
    /// Train cross-validated ensembles on a bag directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Bag directory (default: the synthesize output).
        #[arg(long)]
        bags: Option<PathBuf>,
    },
    /// Score bags with trained models.
    Score {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint file; repeat to form one ensemble.
        #[arg(long = "checkpoint", conflicts_with = "models")]
        checkpoints: Vec<PathBuf>,
        /// Model directory written by `train` (default: the train output).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Bags to score (default: the synthesize output).
        #[arg(long)]
        bags: Option<PathBuf>,
        /// Comma-separated confidence methods (default: all that apply).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Selective curves, median-split tables and agreement statistics from
    /// exported scores.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with predictions.csv and scores.csv (default: the score
        /// output).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Restrict to these methods; repeat or comma-separate.
        #[arg(long = "method", value_delimiter = ',')]
        methods: Vec<String>,
        /// Removals between selective-curve points.
        #[arg(long)]
        curve_step: Option<usize>,
        /// Manifest with rater agreement flags.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the whole experiment.
    RunAll(ConfigArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synthesize(_) => "synthesize",
            Command::Train { .. } => "train",
            Command::Score { .. } => "score",
            Command::Evaluate { .. } => "evaluate",
            Command::RunAll(_) => "run-all",
        }
    }

    fn config_args(&self) -> &ConfigArgs {
        match self {
            Command::Synthesize(c) | Command::RunAll(c) => c,
            Command::Train { cfg, .. } | Command::Score { cfg, .. } | Command::Evaluate { cfg, .. } => cfg,
        }
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("gradeconf-out"))
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| n.trim().parse()).collect()
}

struct Context {
    verbose: bool,
    root: PathBuf,
}

impl Context {
    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("gradeconf: {msg}");
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let ctx = Context {
        verbose: cli.verbose > 0,
        root: output_root(),
    };
    let result = match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| Error::config(format!("cannot start {n} worker threads: {e}")))
            .and_then(|pool| pool.install(|| execute(&cli.command, &ctx))),
        None => execute(&cli.command, &ctx),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gradeconf {}: error: {e}", cli.command.name());
            2
        }
    }
}

fn execute(command: &Command, ctx: &Context) -> Result<()> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let cfg = load_config(command.config_args()).stage("config")?;
    let out = command
        .config_args()
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| ctx.root.join(command.name()));
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::io(&out, e))
        .stage("write")?;

    match command {
        Command::Synthesize(_) => synthesize(&cfg, &out, ctx)?,
        Command::Train { bags, .. } => train_cmd(&cfg, bags.as_deref(), &out, ctx)?,
        Command::Score {
            checkpoints,
            models,
            bags,
            methods,
            ..
        } => score_cmd(&cfg, checkpoints, models.as_deref(), bags.as_deref(), methods, &out, ctx)?,
        Command::Evaluate {
            input,
            methods,
            curve_step,
            manifest,
            ..
        } => evaluate_cmd(&cfg, input.as_deref(), methods, *curve_step, manifest.as_deref(), &out, ctx)?,
        Command::RunAll(_) => {
            let progress = |msg: &str| ctx.log(msg);
            run_experiment_with(&cfg, Some(&out), &progress)?;
        }
    }

    RunInfo {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.master_seed,
        config: cfg.to_text(),
        started_unix_secs: started_unix,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&out)
    .stage("write")?;
    ctx.log(&format!("outputs in {}", out.display()));
    Ok(())
}

fn synthesize(cfg: &ExperimentConfig, out: &Path, ctx: &Context) -> Result<()> {
    cfg.generator.validate().stage("config")?;
    ctx.log("generating data");
    let ds = generate(&cfg.generator).stage("generate")?;
    let reviews = simulate_raters(&ds, &cfg.rater).stage("generate")?;
    write_bag_dir(&out.join("bags"), &ds.bags).stage("write")?;
    write_manifest(&out.join("manifest.csv"), &manifest_rows(&ds, &reviews)).stage("write")
}

fn read_bags(dir: &Path) -> Result<Vec<Bag>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "bag directory not found"),
        ));
    }
    let bags = read_bag_dir(dir)?;
    if bags.is_empty() {
        return Err(Error::contract(format!("no bags in {}", dir.display())));
    }
    Ok(bags)
}

fn train_cmd(cfg: &ExperimentConfig, bags: Option<&Path>, out: &Path, ctx: &Context) -> Result<()> {
    let dir = bags.map(Path::to_path_buf).unwrap_or_else(|| ctx.root.join("synthesize").join("bags"));
    let bags = read_bags(&dir).stage("load")?;
    let mut arch = cfg.arch.clone();
    arch.input_dim = bags[0].feature_dim();
    arch.validate().stage("config")?;
    let cost = cfg.cost_table().stage("config")?;
    let refs: Vec<&Bag> = bags.iter().collect();
    ctx.log(&format!(
        "training {} folds x {} members on {} bags",
        cfg.folds,
        cfg.ensemble_size,
        bags.len()
    ));
    let trained = train_ensemble(
        &refs,
        &arch,
        &cfg.train,
        &LossConfig::sosr(cost),
        cfg.folds,
        cfg.ensemble_size,
        cfg.master_seed,
    )
    .stage("train")?;
    trained.models.save(&out.join("checkpoints")).stage("write")?;
    let text = serde_json::to_string_pretty(&trained.summaries)
        .map_err(|e| Error::format("training summary", e))
        .stage("write")?;
    std::fs::write(out.join("training.json"), text + "\n")
        .map_err(|e| Error::io(out.join("training.json"), e))
        .stage("write")
}

fn score_cmd(
    cfg: &ExperimentConfig,
    checkpoints: &[PathBuf],
    models: Option<&Path>,
    bags: Option<&Path>,
    methods: &[String],
    out: &Path,
    ctx: &Context,
) -> Result<()> {
    let set = if checkpoints.is_empty() {
        let dir = models
            .map(Path::to_path_buf)
            .unwrap_or_else(|| ctx.root.join("train").join("checkpoints"));
        ModelSet::load(&dir).stage("load")?
    } else {
        let members = checkpoints
            .iter()
            .map(|p| load_checkpoint(p))
            .collect::<Result<Vec<_>>>()
            .stage("load")?;
        ModelSet::single_group(members)
    };
    let dir = bags.map(Path::to_path_buf).unwrap_or_else(|| ctx.root.join("synthesize").join("bags"));
    let bags = read_bags(&dir).stage("load")?;
    let methods = if methods.is_empty() {
        Method::ALL
            .into_iter()
            .filter(|m| *m != Method::DeepEnsemble || set.min_group_size() >= 2)
            .collect()
    } else {
        parse_methods(methods).stage("config")?
    };
    let opts = ScoreOptions {
        mc_samples: cfg.mc_samples,
        seed: seed_echo(cfg.master_seed).scoring,
        spread_reduction: cfg.spread_reduction,
    };
    ctx.log(&format!("scoring {} bags with {} models", bags.len(), set.n_models()));
    let scored = score_only(&set, &bags, &methods, &opts).stage("score")?;
    write_predictions_csv(&out.join("predictions.csv"), &scored.predictions).stage("write")?;
    write_scores_csv(&out.join("scores.csv"), &score_rows(&scored.predictions, &scored.scores))
        .stage("write")?;
    let text = serde_json::to_string_pretty(&scored.inference)
        .map_err(|e| Error::format("inference counts", e))
        .stage("write")?;
    std::fs::write(out.join("inference.json"), text + "\n")
        .map_err(|e| Error::io(out.join("inference.json"), e))
        .stage("write")
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    input: Option<&Path>,
    methods: &[String],
    curve_step: Option<usize>,
    manifest: Option<&Path>,
    out: &Path,
    ctx: &Context,
) -> Result<()> {
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| ctx.root.join("score"));
    let preds = read_predictions_csv(&input.join("predictions.csv")).stage("load")?;
    let rows = read_scores_csv(&input.join("scores.csv")).stage("load")?;
    let mut cohorts = cohorts_from_rows(&preds, &rows).stage("load")?;
    if !methods.is_empty() {
        let wanted = parse_methods(methods).stage("config")?;
        if let Some(m) = wanted.iter().find(|m| !cohorts.iter().any(|c| c.method == **m)) {
            return Err(Error::contract(format!("no `{m}` scores in {}", input.display())))
                .stage("load");
        }
        cohorts.retain(|c| wanted.contains(&c.method));
    }
    if cohorts.is_empty() {
        return Err(Error::contract(format!("no scores in {}", input.display()))).stage("load");
    }
    let agreement = match manifest {
        Some(path) => {
            let rows = read_manifest(path).stage("load")?;
            let flags = preds
                .iter()
                .map(|p| {
                    rows.iter()
                        .find(|r| r.bag_id == p.bag_id)
                        .map(|r| r.agreement)
                        .ok_or_else(|| {
                            Error::contract(format!("bag `{}` is not in the manifest", p.bag_id))
                        })
                })
                .collect::<Result<Vec<_>>>()
                .stage("load")?;
            Some(flags)
        }
        None => None,
    };
    let seeds = seed_echo(cfg.master_seed);
    let settings = EvaluationSettings {
        curve_step: curve_step.unwrap_or(cfg.curve_step),
        random_trials: cfg.random_trials,
        bootstrap: cfg.bootstrap,
        baseline_seed: seeds.baseline,
        bootstrap_seed: seeds.bootstrap,
    };
    let cost = crate::losses::CostMatrix::builtin(cfg.cost_matrix, preds[0].n_classes())
        .stage("config")?;
    ctx.log(&format!("evaluating {} bags", preds.len()));
    let evaluation = evaluate_cohort(&preds, &cohorts, agreement.as_deref(), &cost, &settings)
        .stage("evaluate")?;
    write_curves_csv(&out.join("curves.csv"), &evaluation.selective_curves).stage("write")?;
    write_threshold_csv(&out.join("thresholds.csv"), &evaluation.selective_curves)
        .stage("write")?;
    write_stratified_csv(&out.join("stratified.csv"), &evaluation.stratified).stage("write")?;
    if agreement.is_some() {
        write_agreement_csv(&out.join("agreement.csv"), &evaluation.agreement).stage("write")?;
    }
    let text = serde_json::to_string_pretty(&evaluation)
        .map_err(|e| Error::format("evaluation", e))
        .stage("write")?;
    std::fs::write(out.join("evaluation.json"), text + "\n")
        .map_err(|e| Error::io(out.join("evaluation.json"), e))
        .stage("write")
}
