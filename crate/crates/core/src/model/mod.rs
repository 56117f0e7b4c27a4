//! Attention-based multiple-instance network over bags of tile features.
//!
//! Layout (widths are defaults):
//!
//! ```text
//! tiles (T x d) -> FC 128 + tanh -> dropout                  = H
//! H -> FC 128 + tanh -> dropout -> FC 1 -> softmax over tiles = a
//! z = sum_t a_t H_t
//! z -> FC 200 + relu -> dropout -> FC 100 + relu -> dropout -> FC n = risk
//! ```
//!
//! The tile-scoring block is a 128-wide hidden layer followed by a scalar
//! projection per tile. There is no output softmax: the last layer emits
//! one risk per class and the prediction is the class of minimum risk.
//! Dropout is inverted (kept units are scaled by `1 / (1 - rate)`), so
//! deterministic inference needs no rescaling.

mod bagio;
mod checkpoint;
mod optim;
mod train;

use std::ops::Deref;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::numerics::{argmin, streams, RandomStream};

pub use bagio::{read_bag, read_bag_dir, write_bag, write_bag_dir, BAG_FILE_SUFFIX};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::RmsProp;
pub use train::{
    mean_loss, train, train_step, EarlyStopping, EpochRecord, TrainConfig, TrainOutcome,
};

/// One slide: a bag of tile feature vectors with an ordinal grade.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: String,
    pub label: usize,
    /// `T x d`, one row per tile.
    pub tiles: Array2<f64>,
}

impl Bag {
    pub fn new(bag_id: impl Into<String>, label: usize, tiles: Array2<f64>) -> Result<Self> {
        let bag_id = bag_id.into();
        if tiles.nrows() == 0 {
            return Err(Error::contract(format!("bag `{bag_id}` has no tiles")));
        }
        if tiles.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tile features of bag `{bag_id}`")));
        }
        Ok(Self {
            bag_id,
            label,
            tiles,
        })
    }

    pub fn n_tiles(&self) -> usize {
        self.tiles.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.tiles.ncols()
    }
}

/// Per-class risks emitted by the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskVector(pub Vec<f64>);

impl RiskVector {
    /// Class of minimum risk; ties go to the lower index.
    pub fn predicted_class(&self) -> usize {
        argmin(&self.0)
    }
}

impl Deref for RiskVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for RiskVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for RiskVector {
    fn from(v: Vec<f64>) -> Self {
        RiskVector(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub input_dim: usize,
    pub reduction_width: usize,
    pub attention_width: usize,
    pub classifier_widths: Vec<usize>,
    pub n_classes: usize,
    pub dropout_rate: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            reduction_width: 128,
            attention_width: 128,
            classifier_widths: vec![200, 100],
            n_classes: 4,
            dropout_rate: 0.5,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.input_dim, self.reduction_width, self.attention_width];
        if widths.contains(&0) || self.classifier_widths.contains(&0) {
            return Err(Error::config("all layer widths must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("at least two classes are required"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Fully connected layer, `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// LeCun-uniform weights, zero bias.
    fn init(fan_in: usize, fan_out: usize, rng: &mut RandomStream) -> Self {
        let limit = (3.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite init bounds");
        Self {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// The trainable layers, also used as the gradient and optimiser-state
/// container.
#[derive(Debug, Clone, PartialEq)]
pub struct MilLayers {
    pub reduction: Dense,
    pub attention_hidden: Dense,
    pub attention_score: Dense,
    /// Hidden classifier layers followed by the output layer.
    pub classifier: Vec<Dense>,
}

impl MilLayers {
    pub fn zeros_like(&self) -> Self {
        Self {
            reduction: self.reduction.zeros_like(),
            attention_hidden: self.attention_hidden.zeros_like(),
            attention_score: self.attention_score.zeros_like(),
            classifier: self.classifier.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec![
            "reduction".to_string(),
            "attention_hidden".to_string(),
            "attention_score".to_string(),
        ];
        names.extend((0..self.classifier.len()).map(|i| format!("classifier.{i}")));
        names
    }

    pub fn layers(&self) -> Vec<&Dense> {
        let mut out = vec![&self.reduction, &self.attention_hidden, &self.attention_score];
        out.extend(self.classifier.iter());
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out = vec![
            &mut self.reduction,
            &mut self.attention_hidden,
            &mut self.attention_score,
        ];
        out.extend(self.classifier.iter_mut());
        out
    }

    fn shaped(arch: &ArchitectureConfig, mut make: impl FnMut(usize, usize) -> Dense) -> Self {
        let reduction = make(arch.input_dim, arch.reduction_width);
        let attention_hidden = make(arch.reduction_width, arch.attention_width);
        let attention_score = make(arch.attention_width, 1);
        let mut classifier = Vec::with_capacity(arch.classifier_widths.len() + 1);
        let mut fan_in = arch.reduction_width;
        for &w in &arch.classifier_widths {
            classifier.push(make(fan_in, w));
            fan_in = w;
        }
        classifier.push(make(fan_in, arch.n_classes));
        Self {
            reduction,
            attention_hidden,
            attention_score,
            classifier,
        }
    }

    pub fn zeros(arch: &ArchitectureConfig) -> Self {
        Self::shaped(arch, Dense::zeros)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMilParameters {
    pub architecture: ArchitectureConfig,
    pub seed: u64,
    pub layers: MilLayers,
}

pub fn init_parameters(arch: &ArchitectureConfig, seed: u64) -> Result<AttentionMilParameters> {
    arch.validate()?;
    let mut rng = RandomStream::new(seed, streams::INIT);
    let layers = MilLayers::shaped(arch, |i, o| Dense::init(i, o, &mut rng));
    Ok(AttentionMilParameters {
        architecture: arch.clone(),
        seed,
        layers,
    })
}

impl AttentionMilParameters {
    pub fn n_classes(&self) -> usize {
        self.architecture.n_classes
    }

    pub fn ensure_compatible(&self, arch: &ArchitectureConfig) -> Result<()> {
        if self.architecture != *arch {
            return Err(Error::config(format!(
                "checkpoint architecture {:?} does not match requested {:?}",
                self.architecture, arch
            )));
        }
        Ok(())
    }

    pub fn ensure_classes(&self, n_classes: usize) -> Result<()> {
        if self.n_classes() != n_classes {
            return Err(Error::DimensionMismatch {
                context: "model classes vs evaluation classes",
                expected: n_classes,
                found: self.n_classes(),
            });
        }
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .layers()
            .iter()
            .map(|d| d.weight.len() + d.bias.len())
            .sum()
    }
}

/// Dropout behaviour of a forward pass.
pub enum Dropout<'a> {
    Off,
    Sample(&'a mut RandomStream),
}

impl Dropout<'_> {
    fn mask(&mut self, rate: f64, shape: (usize, usize)) -> Option<Array2<f64>> {
        match self {
            Dropout::Sample(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let scale = 1.0 / keep;
                Some(Array2::from_shape_simple_fn(shape, || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                }))
            }
            _ => None,
        }
    }
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

struct HiddenCache {
    input: Array1<f64>,
    pre: Array1<f64>,
    mask: Option<Array1<f64>>,
}

/// Everything the backward pass needs from a forward pass.
struct ForwardCache {
    /// tanh output of the reduction layer, before dropout
    h: Array2<f64>,
    h_mask: Option<Array2<f64>>,
    h_dropped: Array2<f64>,
    a_hidden: Array2<f64>,
    a_mask: Option<Array2<f64>>,
    a_dropped: Array2<f64>,
    attention: Array1<f64>,
    hidden: Vec<HiddenCache>,
    /// input of the output layer
    last_input: Array1<f64>,
    risk: Array1<f64>,
}

fn check_input(params: &AttentionMilParameters, bag: &Bag) -> Result<()> {
    if bag.feature_dim() != params.architecture.input_dim {
        return Err(Error::DimensionMismatch {
            context: "bag feature dimension vs model input",
            expected: params.architecture.input_dim,
            found: bag.feature_dim(),
        });
    }
    if bag.n_tiles() == 0 {
        return Err(Error::contract(format!("bag `{}` has no tiles", bag.bag_id)));
    }
    Ok(())
}

fn forward_cached(
    params: &AttentionMilParameters,
    bag: &Bag,
    mut dropout: Dropout<'_>,
) -> Result<ForwardCache> {
    check_input(params, bag)?;
    let rate = params.architecture.dropout_rate;
    let l = &params.layers;
    let t = bag.n_tiles();

    let h = (bag.tiles.dot(&l.reduction.weight) + &l.reduction.bias).mapv_into(f64::tanh);
    let h_mask = dropout.mask(rate, h.dim());
    let h_dropped = apply_mask(h.clone(), &h_mask);

    let a_hidden = (h_dropped.dot(&l.attention_hidden.weight) + &l.attention_hidden.bias)
        .mapv_into(f64::tanh);
    let a_mask = dropout.mask(rate, a_hidden.dim());
    let a_dropped = apply_mask(a_hidden.clone(), &a_mask);

    let scores = a_dropped.dot(&l.attention_score.weight.column(0)) + l.attention_score.bias[0];
    let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut attention = scores.mapv(|s| (s - max).exp());
    let total = attention.sum();
    attention /= total;
    debug_assert_eq!(attention.len(), t);

    let mut current = h_dropped.t().dot(&attention);
    let n_hidden = l.classifier.len() - 1;
    let mut hidden = Vec::with_capacity(n_hidden);
    for layer in &l.classifier[..n_hidden] {
        let pre = current.dot(&layer.weight) + &layer.bias;
        let post = pre.mapv(|v| v.max(0.0));
        let mask = dropout
            .mask(rate, (1, post.len()))
            .map(|m| m.index_axis_move(Axis(0), 0));
        let next = match &mask {
            Some(m) => &post * m,
            None => post,
        };
        hidden.push(HiddenCache {
            input: current,
            pre,
            mask,
        });
        current = next;
    }
    let out = &l.classifier[n_hidden];
    let risk = current.dot(&out.weight) + &out.bias;
    if risk.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "network output for bag `{}`",
            bag.bag_id
        )));
    }
    Ok(ForwardCache {
        h,
        h_mask,
        h_dropped,
        a_hidden,
        a_mask,
        a_dropped,
        attention,
        hidden,
        last_input: current,
        risk,
    })
}

/// Runs the network on one bag, returning the risk vector and the
/// per-tile attention weights.
pub fn forward(
    params: &AttentionMilParameters,
    bag: &Bag,
    dropout: Dropout<'_>,
) -> Result<(RiskVector, Vec<f64>)> {
    let cache = forward_cached(params, bag, dropout)?;
    Ok((RiskVector(cache.risk.to_vec()), cache.attention.to_vec()))
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (mut row, &x) in out.rows_mut().into_iter().zip(a.iter()) {
        row.scaled_add(x, &b);
    }
    out
}

fn backward(
    params: &AttentionMilParameters,
    bag: &Bag,
    cache: &ForwardCache,
    d_risk: &Array1<f64>,
) -> MilLayers {
    let l = &params.layers;
    let mut grads = l.zeros_like();
    let n_hidden = l.classifier.len() - 1;

    // classifier
    let out = &l.classifier[n_hidden];
    grads.classifier[n_hidden].weight = outer(cache.last_input.view(), d_risk.view());
    grads.classifier[n_hidden].bias = d_risk.clone();
    let mut g = out.weight.dot(d_risk);
    for (i, hc) in cache.hidden.iter().enumerate().rev() {
        if let Some(m) = &hc.mask {
            g *= m;
        }
        g.zip_mut_with(&hc.pre, |gv, &p| {
            if p <= 0.0 {
                *gv = 0.0
            }
        });
        grads.classifier[i].weight = outer(hc.input.view(), g.view());
        grads.classifier[i].bias = g.clone();
        g = l.classifier[i].weight.dot(&g);
    }
    let d_pooled = g;

    // attention pooling: z = H_d^T a
    let a = &cache.attention;
    let mut d_h_dropped = outer(a.view(), d_pooled.view());
    let d_att = cache.h_dropped.dot(&d_pooled);
    let weighted = a.dot(&d_att);
    let d_scores = a * &(d_att - weighted);

    let w_score = l.attention_score.weight.column(0);
    let d_w_score = cache.a_dropped.t().dot(&d_scores);
    grads
        .attention_score
        .weight
        .column_mut(0)
        .assign(&d_w_score);
    grads.attention_score.bias[0] = d_scores.sum();

    let mut d_a = outer(d_scores.view(), w_score);
    if let Some(m) = &cache.a_mask {
        d_a *= m;
    }
    d_a.zip_mut_with(&cache.a_hidden, |d, &y| *d *= 1.0 - y * y);
    grads.attention_hidden.weight = cache.h_dropped.t().dot(&d_a);
    grads.attention_hidden.bias = d_a.sum_axis(Axis(0));
    d_h_dropped += &d_a.dot(&l.attention_hidden.weight.t());

    // reduction
    let mut d_h = d_h_dropped;
    if let Some(m) = &cache.h_mask {
        d_h *= m;
    }
    d_h.zip_mut_with(&cache.h, |d, &y| *d *= 1.0 - y * y);
    grads.reduction.weight = bag.tiles.t().dot(&d_h);
    grads.reduction.bias = d_h.sum_axis(Axis(0));
    grads
}

/// Loss of one bag and the gradient of that loss for every layer.
pub fn loss_and_gradients(
    params: &AttentionMilParameters,
    bag: &Bag,
    loss: &LossConfig,
    dropout: Dropout<'_>,
) -> Result<(f64, MilLayers)> {
    let cache = forward_cached(params, bag, dropout)?;
    let risk = cache.risk.as_slice().expect("contiguous risk");
    let (value, d_risk) = loss.loss_and_gradient(risk, bag.label)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss on bag `{}`",
            bag.bag_id
        )));
    }
    let grads = backward(params, bag, &cache, &Array1::from(d_risk));
    Ok((value, grads))
}

/// `samples` forward passes with independent dropout masks.
pub fn mc_inference(
    params: &AttentionMilParameters,
    bag: &Bag,
    samples: usize,
    rng: &mut RandomStream,
) -> Result<Vec<RiskVector>> {
    if samples < 2 {
        return Err(Error::contract(format!(
            "MC dropout needs at least 2 samples, got {samples}"
        )));
    }
    (0..samples)
        .map(|_| forward(params, bag, Dropout::Sample(rng)).map(|(r, _)| r))
        .collect()
}
