//! Episodic SGD with a step learning-rate schedule and validation-based
//! early stopping.
//!
//! Random streams of `ChaCha8Rng(seed)`: 0 initializes parameters, 1 draws
//! training episodes, 2 draws the fixed validation episodes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{Checkpoint, RngState};
use super::config::RunConfig;
use super::model::Model;
use crate::autodiff::{Gradients, Graph, ParamId};
use crate::error::{Error, Result};
use crate::feature_io::{sample_episode, Episode, FeatureSet};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const TRAIN_STREAM: u64 = 1;
pub const VAL_STREAM: u64 = 2;

/// Plain SGD with optional momentum and global-norm clipping.
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    pub momentum: f64,
    pub clip: Option<f64>,
    velocity: BTreeMap<ParamId, Vec<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(momentum: f64, clip: Option<f64>) -> Self {
        Optimizer {
            momentum,
            clip,
            velocity: BTreeMap::new(),
        }
    }

    pub fn from_config(config: &RunConfig) -> Self {
        Self::new(config.momentum, config.grad_clip)
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64) -> Result<f64> {
        let norm = grads
            .params()
            .values()
            .flat_map(|t| t.data())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite { op: "gradient" });
        }
        if lr == 0.0 {
            return Ok(norm);
        }
        let scale = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let (lr, scale, mu) = (F::of(lr), F::of(scale), F::of(self.momentum));
        for (&id, grad) in grads.params() {
            let old = params.get(id);
            let updated: Vec<F> = if self.momentum > 0.0 {
                let v = self.velocity.entry(id).or_insert_with(|| vec![F::zero(); grad.numel()]);
                v.iter_mut()
                    .zip(grad.data())
                    .for_each(|(v, &g)| *v = mu * *v + scale * g);
                old.data().iter().zip(v.iter()).map(|(&p, &v)| p - lr * v).collect()
            } else {
                old.data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&p, &g)| p - lr * scale * g)
                    .collect()
            };
            params.set(id, Tensor::new(old.shape().to_vec(), updated)?)?;
        }
        Ok(norm)
    }
}

/// Loss of one episode without a backward pass.
pub fn episode_loss<F: Scalar>(model: &Model<F>, episode: &Episode<'_>) -> Result<f64> {
    let eg = model.episode_graph(episode, Graph::new())?;
    Ok(eg.graph.value(eg.loss).item().as_f64())
}

/// Forward, backward and update on one episode; returns the loss before
/// the update.
pub fn train_step<F: Scalar>(
    model: &mut Model<F>,
    optimizer: &mut Optimizer<F>,
    episode: &Episode<'_>,
    lr: f64,
) -> Result<f64> {
    let eg = model.episode_graph(episode, Graph::new())?;
    let loss = eg.graph.value(eg.loss).item().as_f64();
    let grads = eg.graph.backward(eg.loss)?;
    optimizer.step(&mut model.params, &grads, lr)?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    /// Parameters of the epoch with the lowest validation loss.
    pub best: Checkpoint<F>,
    pub history: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// True when the newest validation loss exceeds the mean of the `window`
/// epochs before it. Needs `window` completed epochs of history first.
pub fn should_stop(val_losses: &[f64], window: usize) -> bool {
    let n = val_losses.len();
    if n <= window {
        return false;
    }
    let prev = &val_losses[n - 1 - window..n - 1];
    val_losses[n - 1] > prev.iter().sum::<f64>() / window as f64
}

fn check_compatible(a: &FeatureSet, b: &FeatureSet, what: &str) -> Result<()> {
    if (a.frames, a.boxes_per_frame, a.dim) != (b.frames, b.boxes_per_frame, b.dim) {
        return Err(Error::Validation(format!(
            "{what} set has (T, B, d) = ({}, {}, {}), training set ({}, {}, {})",
            b.frames, b.boxes_per_frame, b.dim, a.frames, a.boxes_per_frame, a.dim
        )));
    }
    Ok(())
}

fn diverged(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            step,
            loss: f64::NAN,
        },
        e => e,
    }
}

pub fn train<F: Scalar>(train_set: &FeatureSet, val_set: &FeatureSet, config: &RunConfig) -> Result<TrainOutcome<F>> {
    train_model(Model::init(config)?, train_set, val_set)
}

/// Trains `model` under its own configuration.
pub fn train_model<F: Scalar>(
    mut model: Model<F>,
    train_set: &FeatureSet,
    val_set: &FeatureSet,
) -> Result<TrainOutcome<F>> {
    let config = model.config.clone();
    config.validate()?;
    check_compatible(train_set, val_set, "validation")?;
    if (train_set.frames, train_set.dim) != (config.frames, config.dim) {
        return Err(Error::Validation(format!(
            "training set has (T, d) = ({}, {}), configuration ({}, {})",
            train_set.frames, train_set.dim, config.frames, config.dim
        )));
    }
    let c = &config;

    let mut val_rng = ChaCha8Rng::seed_from_u64(c.seed);
    val_rng.set_stream(VAL_STREAM);
    let val_episodes = (0..c.val_episodes)
        .map(|_| sample_episode(val_set, c.ways, c.shots, c.queries, &mut val_rng))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut optimizer = Optimizer::from_config(c);
    let train_classes: Vec<String> = train_set.labels().map(str::to_owned).collect();

    let mut history = Vec::new();
    let mut step_losses = Vec::with_capacity(c.max_epochs * c.episodes_per_epoch);
    let mut best: Option<(f64, Checkpoint<F>)> = None;
    let mut val_losses = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=c.max_epochs {
        let lr = c.lr_at(epoch);
        let mut total = 0.0;
        for step in 0..c.episodes_per_epoch {
            let episode = sample_episode(train_set, c.ways, c.shots, c.queries, &mut rng)?;
            let loss = train_step(&mut model, &mut optimizer, &episode, lr).map_err(|e| diverged(e, epoch, step))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            total += loss;
            step_losses.push(loss);
        }
        let val_loss = val_episodes
            .iter()
            .map(|ep| episode_loss(&model, ep))
            .sum::<Result<f64>>()
            .map_err(|e| diverged(e, epoch, c.episodes_per_epoch))?
            / val_episodes.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / c.episodes_per_epoch as f64,
            val_loss,
        };
        log::info!(
            "epoch {epoch}: lr {lr:e}, train loss {:.5}, val loss {val_loss:.5}",
            record.train_loss
        );
        history.push(record);
        val_losses.push(val_loss);

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            let ckpt = Checkpoint {
                model: model.clone(),
                epoch,
                rng: RngState::capture(c.seed, &rng),
                train_classes: train_classes.clone(),
            };
            best = Some((val_loss, ckpt));
        }
        if should_stop(&val_losses, c.early_stop_window) {
            log::info!("early stop after epoch {epoch}");
            stopped_early = true;
            break;
        }
    }

    let best = match best {
        Some((_, ckpt)) => ckpt,
        // max_epochs = 0: hand back the untrained model
        None => Checkpoint {
            model,
            epoch: 0,
            rng: RngState::capture(c.seed, &rng),
            train_classes,
        },
    };
    Ok(TrainOutcome {
        best,
        history,
        step_losses,
        stopped_early,
    })
}

/// `epoch,lr,train_loss,val_loss` rows with round-trip float formatting.
pub fn loss_curve_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss\n");
    for r in history {
        let _ = writeln!(out, "{},{:?},{:?},{:?}", r.epoch, r.lr, r.train_loss, r.val_loss);
    }
    out
}

pub fn write_loss_curve(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, loss_curve_csv(history)).map_err(|e| Error::io(path, e))
}
