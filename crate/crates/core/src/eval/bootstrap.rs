use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{quantile_sorted, RandomStream};

/// Percentile bootstrap interval. Undefined resamples (e.g. an AUC whose
/// resample lost a class) are excluded from the percentiles and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub point: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub resamples: usize,
    pub undefined: usize,
}

/// 2.5 / 97.5 percentiles of the defined values; `None` when more than half
/// of the resamples are undefined.
pub fn percentile_interval(
    point: Option<f64>,
    values: &[Option<f64>],
) -> BootstrapInterval {
    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    let undefined = values.len() - defined.len();
    let (lo, hi) = if defined.is_empty() || 2 * undefined > values.len() {
        (None, None)
    } else {
        defined.sort_by(|a, b| a.total_cmp(b));
        (
            Some(quantile_sorted(&defined, 0.025)),
            Some(quantile_sorted(&defined, 0.975)),
        )
    };
    BootstrapInterval {
        point,
        lo,
        hi,
        resamples: values.len(),
        undefined,
    }
}

fn check_resamples(resamples: usize) -> Result<()> {
    if resamples < 100 {
        return Err(Error::contract(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    Ok(())
}

/// Bootstrap of a metric over `n` items resampled with replacement. The
/// metric sees the resampled item indices.
pub fn bootstrap_ci<F>(
    n: usize,
    metric: F,
    resamples: usize,
    rng: &mut RandomStream,
) -> Result<BootstrapInterval>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    bootstrap_ci_groups(&[n], |groups| metric(&groups[0]), resamples, rng)
}

/// Stratified bootstrap: each group is resampled with replacement within
/// itself, and the metric sees one index list per group.
pub fn bootstrap_ci_groups<F>(
    group_sizes: &[usize],
    metric: F,
    resamples: usize,
    rng: &mut RandomStream,
) -> Result<BootstrapInterval>
where
    F: Fn(&[Vec<usize>]) -> Option<f64>,
{
    check_resamples(resamples)?;
    if group_sizes.contains(&0) {
        return Err(Error::contract("bootstrap over an empty group"));
    }
    let identity: Vec<Vec<usize>> = group_sizes.iter().map(|&n| (0..n).collect()).collect();
    let point = metric(&identity);
    let values: Vec<Option<f64>> = (0..resamples)
        .map(|_| metric(&resample_groups(group_sizes, rng)))
        .collect();
    Ok(percentile_interval(point, &values))
}

pub(crate) fn resample_groups(group_sizes: &[usize], rng: &mut RandomStream) -> Vec<Vec<usize>> {
    group_sizes
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect()
}
