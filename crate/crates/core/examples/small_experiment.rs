//! A scaled-down end-to-end run: generate, cross-validate an ensemble,
//! score the held-out bags and write the report bundle.
//!
//!     cargo run --release --example small_experiment -- [out_dir]

use std::path::PathBuf;

use gradeconf::confidence::Method;
use gradeconf::pipeline::{run_experiment_with, ExperimentConfig};

const CONFIG: &str = "
master_seed = 4
folds = 3
ensemble_size = 3
mc_samples = 20
bootstrap = 300
random_trials = 30
[generator]
bags_per_class = 40
[train]
epochs = 20
";

fn main() -> gradeconf::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "small-experiment".into())
        .into();
    let cfg = ExperimentConfig::from_text(CONFIG)?;
    let run = run_experiment_with(&cfg, Some(&out), &|stage| eprintln!("[{stage}]"))?;
    let r = &run.report;

    println!(
        "{} test bags, overall AUC {:.3} [{:.3}, {:.3}], adjacency {:.3}",
        r.data.n_test,
        r.metrics.overall_auc.point.unwrap_or(f64::NAN),
        r.metrics.overall_auc.lo.unwrap_or(f64::NAN),
        r.metrics.overall_auc.hi.unwrap_or(f64::NAN),
        r.metrics.adjacency_rate
    );
    let quarter = r.data.n_test / 4;
    for m in Method::ALL {
        let point = r.curve(m).and_then(|c| c.point_at(quarter));
        let gap = r
            .stratified
            .method(m)
            .and_then(|s| s.row("overall_auc"))
            .and_then(|row| row.gap.point);
        let p = r.agreement_for(m).map(|a| a.p_value);
        println!(
            "{:<16} AUC after removing {quarter}: {:.3} (random {:.3})  median-split gap {:.3}  agreement p {:.3}",
            m.as_str(),
            point.and_then(|p| p.auc).unwrap_or(f64::NAN),
            point.and_then(|p| p.random_auc).unwrap_or(f64::NAN),
            gap.unwrap_or(f64::NAN),
            p.unwrap_or(f64::NAN)
        );
    }
    for c in &r.comparisons {
        println!(
            "comparison {:<14} loss {:<13} AUC {:.3}  adjacency {:.3}",
            c.name,
            c.loss,
            c.overall_auc.unwrap_or(f64::NAN),
            c.adjacency_rate
        );
    }
    println!("report bundle in {}", out.display());
    Ok(())
}
