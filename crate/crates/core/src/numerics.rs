//! Small deterministic numeric kernels shared by the rest of the crate.
//!
//! Everything here works on plain `f64` slices. Randomness comes from
//! [`RandomStream`], a ChaCha8 generator keyed by a 64-bit seed plus a
//! stream id, so independent consumers (initialisation, dropout, bootstrap,
//! data generation) never share a sequence.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Numerically stable softmax (max subtraction).
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Softmax of the negated input: turns a risk vector into probabilities.
pub fn softmax_neg(values: &[f64]) -> Result<Vec<f64>> {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    softmax(&neg)
}

/// Per-coordinate sample standard deviation (denominator `M - 1`).
pub fn sample_std<V: AsRef<[f64]>>(samples: &[V]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::contract(format!(
            "sample standard deviation needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    // Deviations are taken from the first sample so that a constant input
    // gives exactly zero rather than rounding noise.
    coordinate_mean(samples)?;
    let shift = samples[0].as_ref();
    let shifted: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.as_ref().iter().zip(shift).map(|(x, k)| x - k).collect())
        .collect();
    let mean = coordinate_mean(&shifted)?;
    let denom = (samples.len() - 1) as f64;
    let mut acc = vec![0.0; mean.len()];
    for s in &shifted {
        for ((a, x), m) in acc.iter_mut().zip(s).zip(&mean) {
            let d = x - m;
            *a += d * d;
        }
    }
    Ok(acc.into_iter().map(|a| (a / denom).sqrt()).collect())
}

/// Coordinate-wise mean of equal-length vectors.
pub fn coordinate_mean<V: AsRef<[f64]>>(samples: &[V]) -> Result<Vec<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::contract("mean of an empty sample set"))?;
    let n = first.as_ref().len();
    let mut acc = vec![0.0; n];
    for s in samples {
        let s = s.as_ref();
        if s.len() != n {
            return Err(Error::DimensionMismatch {
                context: "sample set",
                expected: n,
                found: s.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(s) {
            *a += x;
        }
    }
    let m = samples.len() as f64;
    Ok(acc.into_iter().map(|a| a / m).collect())
}

/// `1 - (x - min) / (max - min)`; every output is 1 when the spread is zero.
pub fn min_max_invert_normalize(values: &[f64]) -> Result<Vec<f64>> {
    Ok(min_max_normalize(values)?
        .into_iter()
        .map(|v| 1.0 - v)
        .collect())
}

/// `(x - min) / (max - min)`, mapping everything to 0 on zero spread.
///
/// Callers that want the "all confident" convention on zero spread should
/// use [`min_max_invert_normalize`] or [`min_max_normalize_or_one`].
pub fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let (min, max) = min_max(values)?;
    let spread = max - min;
    if spread <= 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / spread).collect())
}

/// `(x - min) / (max - min)`, mapping everything to 1 on zero spread.
pub fn min_max_normalize_or_one(values: &[f64]) -> Result<Vec<f64>> {
    let (min, max) = min_max(values)?;
    if max - min <= 0.0 {
        return Ok(vec![1.0; values.len()]);
    }
    min_max_normalize(values)
}

pub fn min_max(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::contract("normalisation of an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normalisation input".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

/// Index of the smallest entry; the lowest index wins ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Median of a list (average of the two middle values for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (the "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Some(quantile_sorted(&sorted, q))
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stream ids that separate the independent consumers of randomness.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const RATERS: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const BASELINE: u64 = 8;
    pub const MC: u64 = 9;
}

/// SplitMix64 finaliser, used to derive child seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Reproducible random source: ChaCha8 keyed by `seed` on stream `stream_id`.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream on the same id, keyed by a seed derived from `index`.
    pub fn child(&self, index: u64) -> RandomStream {
        RandomStream::new(derive_seed(self.seed, &[index]), self.stream_id)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
