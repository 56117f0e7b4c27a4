//! Synthetic ordinal bags, simulated raters and stratified splits.
//!
//! Tiles of grade `g` are isotropic Gaussians around
//! `g * separation * u + offset_g`, where `u` is a fixed unit severity
//! direction and `offset_g` a class-specific vector orthogonal to it. A bag
//! labelled `g` holds `ceil(lesion_fraction * T)` tiles of grade `g`; the
//! remaining tiles are benign (grade 0) except for a `coexisting_rate`
//! share drawn from intermediate grades `1..g`, so no tile is more severe
//! than the label. With probability `ambiguity` each
//! grade-`g` tile (for `g > 0`) is instead centred on the midpoint of the
//! grade `g` and `g - 1` means. A bag's `difficulty` is the fraction of its
//! lesion tiles drawn that way.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Bag;
use crate::numerics::{derive_seed, streams, RandomStream};

/// Seed of the class geometry; shared by every dataset.
const GEOMETRY_SEED: u64 = 0x5E_ED0F_6EA3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub tiles_min: usize,
    pub tiles_max: usize,
    pub bags_per_class: usize,
    /// Distance between adjacent class means along the severity direction.
    pub separation: f64,
    /// Norm of the class-specific offsets orthogonal to the severity axis.
    pub off_axis_offset: f64,
    pub tile_noise: f64,
    /// Minimum fraction of a bag's tiles drawn at its labelled grade.
    pub lesion_fraction: f64,
    /// Each bag's lesion fraction is uniform on
    /// `[lesion_fraction, lesion_fraction_max]`.
    pub lesion_fraction_max: f64,
    /// Probability that a lesion tile sits on the boundary with the grade below.
    pub ambiguity: f64,
    /// Probability that a non-lesion tile of a grade `g >= 2` bag comes
    /// from an intermediate grade in `1..g` rather than grade 0.
    pub coexisting_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            feature_dim: 64,
            tiles_min: 30,
            tiles_max: 60,
            bags_per_class: 100,
            separation: 0.5,
            off_axis_offset: 2.5,
            tile_noise: 1.0,
            lesion_fraction: 0.1,
            lesion_fraction_max: 0.1,
            ambiguity: 0.35,
            coexisting_rate: 0.1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("generator needs at least 2 classes"));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("feature dimension must be >= 2"));
        }
        if self.tiles_min == 0 || self.tiles_max < self.tiles_min {
            return Err(Error::config("tile range must satisfy 1 <= tiles_min <= tiles_max"));
        }
        if self.bags_per_class == 0 {
            return Err(Error::config("bags_per_class must be >= 1"));
        }
        if !(self.separation > 0.0) || !(self.tile_noise > 0.0) {
            return Err(Error::config("separation and tile noise must be positive"));
        }
        if !(self.off_axis_offset >= 0.0) {
            return Err(Error::config("off-axis offset must be non-negative"));
        }
        if !(self.lesion_fraction > 0.0 && self.lesion_fraction <= 1.0) {
            return Err(Error::config("lesion fraction must lie in (0, 1]"));
        }
        if !(self.lesion_fraction_max >= self.lesion_fraction && self.lesion_fraction_max <= 1.0) {
            return Err(Error::config("lesion_fraction_max must lie in [lesion_fraction, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::config("ambiguity must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.coexisting_rate) {
            return Err(Error::config("coexisting rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Where a generated tile came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSource {
    /// Grade whose distribution produced the tile.
    pub grade: usize,
    /// Centred on the midpoint of `grade` and `grade - 1`.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub bags: Vec<Bag>,
    /// Per bag, in `[0, 1]`.
    pub difficulty: Vec<f64>,
    pub tile_sources: Vec<Vec<TileSource>>,
    pub config: GeneratorConfig,
}

impl SyntheticDataset {
    pub fn labels(&self) -> Vec<usize> {
        self.bags.iter().map(|b| b.label).collect()
    }
}

/// Class means, one row per grade.
pub fn class_means(cfg: &GeneratorConfig) -> Array2<f64> {
    let d = cfg.feature_dim;
    let axis = 1.0 / (d as f64).sqrt();
    let mut rng = RandomStream::new(GEOMETRY_SEED, streams::DATA);
    let mut means = Array2::zeros((cfg.n_classes, d));
    for (g, mut row) in means.rows_mut().into_iter().enumerate() {
        let mut offset: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let along: f64 = offset.iter().sum::<f64>() * axis;
        offset.iter_mut().for_each(|v| *v -= along * axis);
        let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (x, o) in row.iter_mut().zip(offset) {
            *x = g as f64 * cfg.separation * axis + cfg.off_axis_offset * o / norm;
        }
    }
    means
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let means = class_means(cfg);
    let d = cfg.feature_dim;
    let mut generated = Vec::with_capacity(cfg.n_classes * cfg.bags_per_class);

    for grade in 0..cfg.n_classes {
        for i in 0..cfg.bags_per_class {
            let bag_seed = derive_seed(cfg.seed, &[grade as u64, i as u64]);
            let mut rng = RandomStream::new(bag_seed, streams::DATA);
            let n_tiles = rng.random_range(cfg.tiles_min..=cfg.tiles_max);
            let fraction = cfg.lesion_fraction
                + (cfg.lesion_fraction_max - cfg.lesion_fraction) * rng.random::<f64>();
            let n_lesion = if grade == 0 {
                n_tiles
            } else {
                ((fraction * n_tiles as f64).ceil() as usize).clamp(1, n_tiles)
            };
            let mut sources = Vec::with_capacity(n_tiles);
            for _ in 0..n_lesion {
                let u: f64 = rng.random();
                sources.push(TileSource {
                    grade,
                    boundary: grade > 0 && u < cfg.ambiguity,
                });
            }
            for _ in n_lesion..n_tiles {
                let coexisting = grade >= 2 && rng.random::<f64>() < cfg.coexisting_rate;
                sources.push(TileSource {
                    grade: if coexisting { rng.random_range(1..grade) } else { 0 },
                    boundary: false,
                });
            }
            sources.shuffle(&mut rng);
            let ambiguous = sources.iter().filter(|s| s.boundary).count();
            let difficulty = if grade == 0 {
                0.0
            } else {
                ambiguous as f64 / n_lesion as f64
            };

            let mut tiles = Array2::zeros((n_tiles, d));
            for (mut row, src) in tiles.rows_mut().into_iter().zip(&sources) {
                let centre = means.row(src.grade);
                for (j, x) in row.iter_mut().enumerate() {
                    let mu = if src.boundary {
                        0.5 * (centre[j] + means[[src.grade - 1, j]])
                    } else {
                        centre[j]
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    *x = mu + cfg.tile_noise * z;
                }
            }
            generated.push((grade, tiles, difficulty, sources));
        }
    }

    // interleave classes so bag ids carry no label information
    let mut order: Vec<usize> = (0..generated.len()).collect();
    order.shuffle(&mut RandomStream::new(cfg.seed, streams::SPLIT));
    let mut slots: Vec<Option<_>> = generated.into_iter().map(Some).collect();
    let mut bags = Vec::with_capacity(order.len());
    let mut difficulty = Vec::with_capacity(order.len());
    let mut tile_sources = Vec::with_capacity(order.len());
    for (new_index, &old) in order.iter().enumerate() {
        let (grade, tiles, diff, sources) = slots[old].take().expect("each slot used once");
        bags.push(Bag::new(format!("bag_{new_index:04}"), grade, tiles)?);
        difficulty.push(diff);
        tile_sources.push(sources);
    }
    Ok(SyntheticDataset {
        bags,
        difficulty,
        tile_sources,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterConfig {
    /// Probability scale of reporting an adjacent grade on ambiguous bags.
    pub boundary_confusion: f64,
    pub seed: u64,
}

impl Default for RaterConfig {
    fn default() -> Self {
        Self {
            boundary_confusion: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterReviews {
    pub rater1: Vec<usize>,
    pub rater2: Vec<usize>,
    pub agreement: Vec<bool>,
}

/// Two independent raters. On a bag with difficulty `d > 0` each rater
/// reports an adjacent grade (up or down with equal probability, clamped to
/// the valid range) with probability `boundary_confusion * d`.
pub fn simulate_raters(ds: &SyntheticDataset, rc: &RaterConfig) -> Result<RaterReviews> {
    if !(0.0..1.0).contains(&rc.boundary_confusion) {
        return Err(Error::config("boundary confusion must lie in [0, 1)"));
    }
    let top = ds.config.n_classes - 1;
    let mut rng = RandomStream::new(rc.seed, streams::RATERS);
    let mut review = |label: usize, difficulty: f64| {
        let flip: f64 = rng.random();
        let up: bool = rng.random();
        if difficulty > 0.0 && flip < rc.boundary_confusion * difficulty {
            if up {
                (label + 1).min(top)
            } else {
                label.saturating_sub(1)
            }
        } else {
            label
        }
    };
    let mut rater1 = Vec::with_capacity(ds.bags.len());
    let mut rater2 = Vec::with_capacity(ds.bags.len());
    for (bag, &diff) in ds.bags.iter().zip(&ds.difficulty) {
        rater1.push(review(bag.label, diff));
        rater2.push(review(bag.label, diff));
    }
    let agreement = rater1.iter().zip(&rater2).map(|(a, b)| a == b).collect();
    Ok(RaterReviews {
        rater1,
        rater2,
        agreement,
    })
}

/// Index split of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

fn indices_by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Stratified k-fold: every present class is shuffled and dealt
/// round-robin over the folds, continuing the deal across classes so fold
/// sizes also differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::config("k-fold needs k >= 2"));
    }
    let mut rng = RandomStream::new(seed, streams::SPLIT);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut members) in indices_by_class(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::contract(format!(
                "class {class} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut val = folds[f].clone();
            val.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            FoldSplit { train, val }
        })
        .collect())
}

/// Stratified hold-out: `round(fraction * count)` members of every class
/// (at least one) go to the held-out set. Returns `(rest, held_out)`.
pub fn stratified_holdout(
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("hold-out fraction must lie in (0, 1)"));
    }
    let mut rng = RandomStream::new(seed, streams::SPLIT).child(1);
    let mut rest = Vec::new();
    let mut held = Vec::new();
    for (class, mut members) in indices_by_class(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let take = ((fraction * members.len() as f64).round() as usize).max(1);
        if take >= members.len() {
            return Err(Error::contract(format!(
                "class {class} is too small for a {fraction} hold-out"
            )));
        }
        members.shuffle(&mut rng);
        held.extend_from_slice(&members[..take]);
        rest.extend_from_slice(&members[take..]);
    }
    rest.sort_unstable();
    held.sort_unstable();
    Ok((rest, held))
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub bag_id: String,
    pub label: usize,
    pub difficulty: f64,
    pub rater1: usize,
    pub rater2: usize,
    pub agreement: bool,
}

pub fn manifest_rows(ds: &SyntheticDataset, reviews: &RaterReviews) -> Vec<ManifestRow> {
    ds.bags
        .iter()
        .enumerate()
        .map(|(i, b)| ManifestRow {
            bag_id: b.bag_id.clone(),
            label: b.label,
            difficulty: ds.difficulty[i],
            rater1: reviews.rater1[i],
            rater2: reviews.rater2[i],
            agreement: reviews.agreement[i],
        })
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("manifest", e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format("manifest", e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::format(format!("manifest {}", path.display()), e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(format!("manifest {}", path.display()), e)))
        .collect()
}
