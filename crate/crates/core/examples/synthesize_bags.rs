//! Generates a synthetic ordinal dataset, simulates two raters and writes
//! the bag files plus manifest to a directory.
//!
//!     cargo run --example synthesize_bags -- [out_dir]

use std::path::PathBuf;

use gradeconf::model::write_bag_dir;
use gradeconf::synthdata::{
    generate, manifest_rows, simulate_raters, write_manifest, GeneratorConfig, RaterConfig,
};

fn main() -> gradeconf::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synth-bags".into())
        .into();

    let cfg = GeneratorConfig {
        bags_per_class: 25,
        seed: 3,
        ..GeneratorConfig::default()
    };
    let ds = generate(&cfg)?;
    let reviews = simulate_raters(&ds, &RaterConfig { boundary_confusion: 0.6, seed: 3 })?;

    println!("{} bags, {} features per tile", ds.bags.len(), cfg.feature_dim);
    for grade in 0..cfg.n_classes {
        let idx: Vec<usize> = (0..ds.bags.len()).filter(|&i| ds.bags[i].label == grade).collect();
        let tiles: usize = idx.iter().map(|&i| ds.bags[i].n_tiles()).sum();
        let difficulty: f64 = idx.iter().map(|&i| ds.difficulty[i]).sum::<f64>() / idx.len() as f64;
        let disagree = idx.iter().filter(|&&i| !reviews.agreement[i]).count();
        println!(
            "grade {grade}: {:>3} bags  mean tiles {:>5.1}  mean difficulty {difficulty:.3}  rater disagreements {disagree}",
            idx.len(),
            tiles as f64 / idx.len() as f64,
        );
    }

    write_bag_dir(&out, &ds.bags)?;
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &manifest_rows(&ds, &reviews))?;
    println!("wrote {} and {} bag files", manifest.display(), ds.bags.len());
    Ok(())
}
