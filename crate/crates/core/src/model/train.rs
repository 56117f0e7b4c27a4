use std::borrow::Borrow;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    forward, init_parameters, loss_and_gradients, ArchitectureConfig, AttentionMilParameters, Bag,
    Dropout, RmsProp,
};
use crate::error::{Error, Result};
use crate::losses::{CostMatrix, CostMatrixKind, LossConfig};
use crate::numerics::{streams, RandomStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub rmsprop_momentum: f64,
    pub rmsprop_decay: f64,
    /// Epochs without a validation improvement before training stops.
    pub early_stopping_patience: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            rmsprop_momentum: 0.5,
            rmsprop_decay: 0.9,
            early_stopping_patience: 10,
            loss: LossConfig::sosr(
                CostMatrix::builtin(CostMatrixKind::Custom, 4).expect("builtin table"),
            ),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if self.early_stopping_patience == 0 {
            return Err(Error::config("early stopping patience must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(0.0..1.0).contains(&self.rmsprop_momentum)
        {
            return Err(Error::config("RMSProp decay and momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One optimisation step on a single bag, with dropout active.
pub fn train_step(
    params: &mut AttentionMilParameters,
    bag: &Bag,
    loss: &LossConfig,
    optimizer: &mut RmsProp,
    dropout_rng: &mut RandomStream,
) -> Result<f64> {
    let (value, grads) = loss_and_gradients(params, bag, loss, Dropout::Sample(dropout_rng))?;
    optimizer.step(&mut params.layers, &grads);
    Ok(value)
}

/// Mean loss over a set of bags with dropout off.
pub fn mean_loss<B: Borrow<Bag>>(
    params: &AttentionMilParameters,
    bags: &[B],
    loss: &LossConfig,
) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::contract("mean loss over an empty bag set"));
    }
    let mut total = 0.0;
    for bag in bags {
        let bag = bag.borrow();
        let (risk, _) = forward(params, bag, Dropout::Off)?;
        total += loss.loss(&risk, bag.label)?;
    }
    Ok(total / bags.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    /// Records an epoch's loss; returns `true` when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best-validation epoch.
    pub params: AttentionMilParameters,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains from a fresh initialisation: one shuffled pass over the training
/// bags per epoch, one bag per step, keeping the best-validation weights.
pub fn train<B: Borrow<Bag>>(
    train_bags: &[B],
    val_bags: &[B],
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = init_parameters(arch, cfg.seed)?;
    train_from(params, train_bags, val_bags, cfg)
}

pub(crate) fn train_from<B: Borrow<Bag>>(
    mut params: AttentionMilParameters,
    train_bags: &[B],
    val_bags: &[B],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.loss.validate(params.n_classes())?;
    if train_bags.is_empty() || val_bags.is_empty() {
        return Err(Error::contract("training and validation splits must be non-empty"));
    }
    let mut shuffle_rng = RandomStream::new(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = RandomStream::new(cfg.seed, streams::DROPOUT);
    let mut optimizer = RmsProp::new(
        &params.layers,
        cfg.learning_rate,
        cfg.rmsprop_decay,
        cfg.rmsprop_momentum,
    );
    let mut order: Vec<usize> = (0..train_bags.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.early_stopping_patience);
    let mut best = params.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            total += train_step(
                &mut params,
                train_bags[i].borrow(),
                &cfg.loss,
                &mut optimizer,
                &mut dropout_rng,
            )?;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = mean_loss(&params, val_bags, &cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if stopper.observe(epoch, val_loss) {
            best.clone_from(&params);
        }
        if stopper.should_stop() {
            break;
        }
    }
    let stopped_early = history.len() < cfg.epochs;
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(1),
        stopped_early,
    })
}
