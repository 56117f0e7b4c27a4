//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Property checks (1-4, 9, 10) make the binary exit non-zero when they
//! fail. The synthetic-experiment checks (5-8) are reported as measured;
//! set `GRADECONF_STRICT=1` to make them fatal too.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gradeconf::confidence::{grade_sensitive, mc_dropout_confidence, Method, SpreadReduction};
use gradeconf::eval::{binary_auc, npv, weighted_accuracy, LabeledPrediction};
use gradeconf::losses::{cross_entropy_loss, CostMatrix, CostMatrixKind, LossConfig};
use gradeconf::model::{
    forward, init_parameters, loss_and_gradients, mc_inference, ArchitectureConfig,
    AttentionMilParameters, Bag, Dropout, RiskVector,
};
use gradeconf::numerics::{softmax, streams, RandomStream};
use gradeconf::pipeline::{run_experiment_with, ExperimentConfig, ExperimentRun};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const REMOVED_AT_25: usize = 15;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn custom() -> CostMatrix {
    CostMatrix::builtin(CostMatrixKind::Custom, 4).unwrap()
}

fn random_bag(label: usize, tiles: usize, dim: usize, rng: &mut RandomStream) -> Bag {
    let x = Array2::from_shape_simple_fn((tiles, dim), || rng.sample::<f64, _>(StandardNormal));
    Bag::new("probe", label, x).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn perturbed(p: &AttentionMilParameters, layer: usize, idx: usize, delta: f64) -> AttentionMilParameters {
    let mut q = p.clone();
    let d = &mut q.layers.layers_mut()[layer];
    let n_w = d.weight.len();
    if idx < n_w {
        d.weight.as_slice_mut().unwrap()[idx] += delta;
    } else {
        d.bias.as_slice_mut().unwrap()[idx - n_w] += delta;
    }
    q
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut rng = RandomStream::new(101, 99);
    let mut probes = 0;
    let mut worst: f64 = 0.0;

    // loss-level probes
    let cm = custom();
    for i in 0..60 {
        let risk: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = i % 4;
        let sosr = LossConfig::sosr(cm.clone());
        for loss in [&sosr, &LossConfig::CrossEntropy] {
            let (_, g) = loss.loss_and_gradient(&risk, y).unwrap();
            for k in 0..4 {
                let mut up = risk.clone();
                up[k] += h;
                let mut down = risk.clone();
                down[k] -= h;
                let fd = (loss.loss(&up, y).unwrap() - loss.loss(&down, y).unwrap()) / (2.0 * h);
                worst = worst.max(rel_err(g[k], fd));
                probes += 1;
            }
        }
        let (_, g) = cross_entropy_loss(&risk, y).unwrap();
        assert_eq!(g.len(), 4);
    }

    // full network probes over random parameter coordinates
    let arch = ArchitectureConfig {
        input_dim: 6,
        reduction_width: 8,
        attention_width: 5,
        classifier_widths: vec![7, 5],
        n_classes: 4,
        dropout_rate: 0.5,
    };
    for seed in 0..6u64 {
        let mut p = init_parameters(&arch, seed).unwrap();
        for d in p.layers.layers_mut() {
            d.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let bag = random_bag((seed % 4) as usize, 3, 6, &mut rng);
        let loss = if seed % 2 == 0 {
            LossConfig::sosr(cm.clone())
        } else {
            LossConfig::CrossEntropy
        };
        let (_, grads) = loss_and_gradients(&p, &bag, &loss, Dropout::Off).unwrap();
        let eval = |q: &AttentionMilParameters| {
            let (r, _) = forward(q, &bag, Dropout::Off).unwrap();
            loss.loss(&r, bag.label).unwrap()
        };
        let n_layers = p.layers.layers().len();
        for _ in 0..40 {
            let li = rng.random_range(0..n_layers);
            let g = grads.layers()[li];
            let n_w = g.weight.len();
            let idx = rng.random_range(0..n_w + g.bias.len());
            let analytic = if idx < n_w {
                g.weight.as_slice().unwrap()[idx]
            } else {
                g.bias.as_slice().unwrap()[idx - n_w]
            };
            let fd = (eval(&perturbed(&p, li, idx, h)) - eval(&perturbed(&p, li, idx, -h))) / (2.0 * h);
            worst = worst.max(rel_err(analytic, fd));
            probes += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        probes >= 100 && worst < 1e-4 && secs < 30.0,
        format!("{probes} probes, worst relative error {worst:.2e}, {secs:.2}s"),
    )
}

fn grade_sensitive_suite() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let sm = softmax(&[0.0, -1.0, -2.0, -3.0]).unwrap();
    for (a, b) in sm.iter().zip([0.6439, 0.2369, 0.0871, 0.0321]) {
        ok &= (a - b).abs() <= 1e-4;
    }
    ok &= (grade_sensitive(&[0.0, 1.0, 2.0, 3.0]).unwrap() - 0.4070).abs() <= 1e-4;
    ok &= grade_sensitive(&[0.0; 4]).unwrap() == 0.0;
    ok &= grade_sensitive(&[0.2, 0.2, 5.0, 5.0]).unwrap().abs() <= 1e-12;
    let mut rng = RandomStream::new(7, 99);
    let mut worst_shift: f64 = 0.0;
    let mut in_range = true;
    for _ in 0..10_000 {
        let r: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c = grade_sensitive(&r).unwrap();
        in_range &= (0.0..1.0).contains(&c);
        let shift = rng.random_range(-5.0..5.0);
        let shifted: Vec<f64> = r.iter().map(|x| x + shift).collect();
        worst_shift = worst_shift.max((grade_sensitive(&shifted).unwrap() - c).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok && in_range && worst_shift <= 1e-12 && secs < 5.0,
        format!("examples ok={ok}, 10^4 vectors in [0,1)={in_range}, shift error {worst_shift:.1e}, {secs:.2}s"),
    )
}

fn two_pass_std(samples: &[RiskVector]) -> f64 {
    let m = samples.len() as f64;
    let n = samples[0].len();
    let mut total = 0.0;
    for k in 0..n {
        let mean = samples.iter().map(|s| s[k]).sum::<f64>() / m;
        let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (m - 1.0);
        total += var.sqrt();
    }
    total / n as f64
}

fn spread_pipeline() -> Outcome {
    let mut rng = RandomStream::new(11, 99);
    let arch = ArchitectureConfig {
        input_dim: 6,
        reduction_width: 8,
        attention_width: 5,
        classifier_widths: vec![7],
        n_classes: 4,
        dropout_rate: 0.5,
    };
    let p = init_parameters(&arch, 3).unwrap();
    let bags: Vec<Bag> = (0..12).map(|i| random_bag(i % 4, 5, 6, &mut rng)).collect();
    let mut mc = RandomStream::new(5, streams::MC);
    let samples: Vec<(String, Vec<RiskVector>)> = bags
        .iter()
        .enumerate()
        .map(|(i, b)| (format!("b{i}"), mc_inference(&p, b, 50, &mut mc).unwrap()))
        .collect();
    let scores = mc_dropout_confidence(&samples, SpreadReduction::MeanOverClasses).unwrap();
    let spreads: Vec<f64> = samples.iter().map(|(_, s)| two_pass_std(s)).collect();
    let lo = spreads.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = spreads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = scores
        .values()
        .iter()
        .zip(&spreads)
        .map(|(c, s)| (c - (1.0 - (s - lo) / (hi - lo))).abs())
        .fold(0.0, f64::max);

    let p0 = init_parameters(&ArchitectureConfig { dropout_rate: 0.0, ..arch }, 3).unwrap();
    let frozen: Vec<(String, Vec<RiskVector>)> = bags
        .iter()
        .enumerate()
        .map(|(i, b)| (format!("b{i}"), mc_inference(&p0, b, 50, &mut mc).unwrap()))
        .collect();
    let identical = frozen.iter().all(|(_, s)| s.iter().all(|x| *x == s[0]));
    let ones = mc_dropout_confidence(&frozen, SpreadReduction::MeanOverClasses)
        .unwrap()
        .values()
        .iter()
        .all(|&c| c == 1.0);
    outcome(
        worst <= 1e-10 && identical && ones,
        format!("oracle error {worst:.1e}, rate 0 identical samples={identical}, all ones={ones}"),
    )
}

fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (s, &l) in scores.iter().zip(labels) {
        if !l {
            continue;
        }
        for (t, &m) in scores.iter().zip(labels) {
            if m {
                continue;
            }
            pairs += 1.0;
            if s > t {
                wins += 1.0;
            } else if s == t {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn prediction(true_class: usize, predicted: usize) -> LabeledPrediction {
    let mut risk = vec![1.0; 4];
    risk[predicted] = 0.0;
    LabeledPrediction::new(format!("{true_class}{predicted}"), true_class, RiskVector(risk)).unwrap()
}

fn metric_oracles() -> Outcome {
    let mut rng = RandomStream::new(13, 99);
    let mut exact = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=200);
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        exact &= binary_auc(&scores, &labels).unwrap() == pair_count_auc(&scores, &labels);
    }
    let wa = weighted_accuracy(&[prediction(0, 0), prediction(3, 1)], &custom()).unwrap();
    let preds: Vec<_> = [(0, 0), (3, 0), (3, 3), (3, 3)]
        .iter()
        .map(|&(t, p)| prediction(t, p))
        .collect();
    let v = npv(&preds, &[3]);
    outcome(
        exact && (wa - 0.65).abs() < 1e-12 && v == Some(0.5),
        format!("50 cohorts exact={exact}, weighted accuracy {wa:.4}, npv {v:?}"),
    )
}

/// Default-config experiments shared by criteria 5-9.
fn experiments() -> Vec<ExperimentRun> {
    SEEDS
        .iter()
        .map(|&seed| {
            let start = Instant::now();
            let cfg = ExperimentConfig::default().with_seed(seed);
            let run = run_experiment_with(&cfg, None, &|_| {}).expect("default experiment runs");
            eprintln!("  (seed {seed}: {:.0}s)", start.elapsed().as_secs_f64());
            run
        })
        .collect()
}

fn count_line(hits: usize) -> String {
    format!("{hits}/{} seeds", SEEDS.len())
}

fn selective(runs: &[ExperimentRun]) -> Outcome {
    let methods = [Method::GradeSensitive, Method::RawRisk, Method::DeepEnsemble];
    let mut hits = 0;
    let mut lines = Vec::new();
    for run in runs {
        let mut seed_ok = true;
        let mut parts = Vec::new();
        for m in methods {
            let curve = run.report.curve(m).expect("curve present");
            let base = curve.point_at(0).and_then(|p| p.auc);
            let at = curve.point_at(REMOVED_AT_25).expect("25% point");
            let ok = match (base, at.auc, at.random_auc) {
                (Some(b), Some(a), Some(r)) => a > b && a - r >= 0.01,
                _ => false,
            };
            seed_ok &= ok;
            parts.push(format!(
                "{} {:.3}/{:.3}/{:.3}",
                m.as_str(),
                base.unwrap_or(f64::NAN),
                at.auc.unwrap_or(f64::NAN),
                at.random_auc.unwrap_or(f64::NAN)
            ));
        }
        hits += seed_ok as usize;
        lines.push(format!("[{}]", parts.join(", ")));
    }
    outcome(
        hits >= 4,
        format!("{} (base/at 25%/random) {}", count_line(hits), lines.join(" ")),
    )
}

fn median_gap(runs: &[ExperimentRun]) -> Outcome {
    let mut hits = 0;
    let mut parts = Vec::new();
    for run in runs {
        let row = run
            .report
            .stratified
            .method(Method::GradeSensitive)
            .and_then(|m| m.row("overall_auc"))
            .expect("stratified overall AUC");
        let gap = &row.gap;
        let ok = matches!((gap.point, gap.lo), (Some(p), Some(lo)) if p > 0.0 && lo >= -0.01);
        hits += ok as usize;
        parts.push(format!(
            "{:.3} [{:.3}, {:.3}]",
            gap.point.unwrap_or(f64::NAN),
            gap.lo.unwrap_or(f64::NAN),
            gap.hi.unwrap_or(f64::NAN)
        ));
    }
    outcome(hits >= 4, format!("{} gaps {}", count_line(hits), parts.join(", ")))
}

fn agreement(runs: &[ExperimentRun]) -> Outcome {
    let mut hits = 0;
    let mut parts = Vec::new();
    for run in runs {
        match run.report.agreement_for(Method::GradeSensitive) {
            Some(a) => {
                hits += (a.p_value < 0.05) as usize;
                parts.push(format!("p={:.4} ({} disagree)", a.p_value, a.n_disagree));
            }
            None => parts.push("undefined (one agreement group)".into()),
        }
    }
    outcome(hits >= 4, format!("{} {}", count_line(hits), parts.join(", ")))
}

fn adjacency(runs: &[ExperimentRun]) -> Outcome {
    let mut all_high = true;
    let mut hits = 0;
    let mut parts = Vec::new();
    for run in runs {
        let sosr = run.report.metrics.adjacency_rate;
        let ce = run
            .report
            .comparison("cross_entropy")
            .expect("cross-entropy comparison")
            .adjacency_rate;
        all_high &= sosr >= 0.9;
        hits += (sosr >= ce) as usize;
        parts.push(format!("{sosr:.3} vs {ce:.3}"));
    }
    outcome(
        all_high && hits >= 4,
        format!(
            "sosr >= 0.9 in every seed={all_high}, sosr >= ce in {} ({})",
            count_line(hits),
            parts.join(", ")
        ),
    )
}

fn inference_counts(runs: &[ExperimentRun]) -> Outcome {
    let mut ok = true;
    let mut detail = String::new();
    for run in runs {
        let cfg = &run.report.config;
        for (m, expected) in [
            (Method::GradeSensitive, 1.0),
            (Method::RawRisk, 1.0),
            (Method::McDropout, cfg.mc_samples as f64),
            (Method::DeepEnsemble, cfg.ensemble_size as f64),
        ] {
            let count = run.report.inference_for(m).expect("inference count");
            ok &= count.passes_per_bag_per_unit == expected;
            if run.report.config.master_seed == SEEDS[0] {
                detail += &format!(
                    "{} {} per bag per {}, ",
                    m.as_str(),
                    count.passes_per_bag_per_unit,
                    count.unit
                );
            }
        }
    }
    outcome(ok, detail.trim_end_matches(", ").to_string())
}

const DETERMINISM_CONFIG: &str = "
folds = 3
ensemble_size = 2
mc_samples = 10
bootstrap = 200
random_trials = 10
[generator]
bags_per_class = 20
[train]
epochs = 4
";

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("det.cfg");
    std::fs::write(&cfg, DETERMINISM_CONFIG).unwrap();
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_gradeconf"))
            .args(["run-all", "--seed", "42", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .expect("binary runs")
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let (ra, rb) = (run(&a), run(&b));
    if !ra.status.success() || !rb.status.success() {
        return outcome(false, String::from_utf8_lossy(&ra.stderr).into_owned());
    }
    let files = ["report.json", "curves.csv", "stratified.csv", "scores.csv", "predictions.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} report files byte-identical", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes us skips the run
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }
    let strict = std::env::var("GRADECONF_STRICT").is_ok_and(|v| v == "1");
    let mut fatal = false;
    let mut report = |n: usize, experimental: bool, o: Outcome| {
        println!(
            "criterion {n:>2}: {} | {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass && (strict || !experimental) {
            fatal = true;
        }
    };
    report(1, false, gradient_check());
    report(2, false, grade_sensitive_suite());
    report(3, false, spread_pipeline());
    report(4, false, metric_oracles());
    let runs = experiments();
    report(5, true, selective(&runs));
    report(6, true, median_gap(&runs));
    report(7, true, agreement(&runs));
    report(8, true, adjacency(&runs));
    report(9, false, inference_counts(&runs));
    report(10, false, determinism());
    if fatal {
        std::process::exit(1);
    }
}
