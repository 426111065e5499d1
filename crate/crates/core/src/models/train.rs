//! Mini-batch training with Adam or plain SGD.
//!
//! Batch gradients are computed per record in parallel and summed in record
//! order, so a run is a pure function of data order, config and seed.

use rayon::prelude::*;

use crate::features::FeatureSequence;
use crate::rng::SeededRng;

use super::{Classifier, Model, ModelError, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Final,
    BestValidation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Uniform init bound; Xavier when `None`.
    pub init_scale: Option<f64>,
    pub clip_norm: Option<f64>,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_scale: None,
            clip_norm: Some(5.0),
            selection: Selection::Final,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("adam needs betas in [0, 1) and epsilon > 0");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub sequence: &'a FeatureSequence,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, each measured before its update.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

/// Mean loss and mean gradient over `samples`.
pub fn batch_gradient(model: &Model, samples: &[Sample]) -> Result<(f64, Vec<f64>), ModelError> {
    let n = model.params().len();
    let per_record: Vec<(f64, Vec<f64>)> = samples
        .par_iter()
        .map(|s| {
            let mut g = vec![0.0; n];
            model.accumulate_gradient(s.sequence, s.target, &mut g).map(|l| (l, g))
        })
        .collect::<Result<_, _>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (l, g) in &per_record {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let scale = 1.0 / samples.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

pub fn mean_loss(model: &Model, samples: &[Sample]) -> Result<f64, ModelError> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.loss(s.sequence, s.target))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len().max(1) as f64)
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Initialises a `kind` model from `config.seed` and trains it.
pub fn train(
    kind: ModelKind,
    hidden: usize,
    train_set: &[Sample],
    validation: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    let mut init_rng = SeededRng::new(config.seed);
    let model = Model::init(kind, hidden, config.init_scale, &mut init_rng);
    train_from(model, train_set, validation, config)
}

/// Trains an already initialised model.
pub fn train_from(
    mut model: Model,
    train_set: &[Sample],
    validation: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if config.selection == Selection::BestValidation && validation.is_none_or(|v| v.is_empty()) {
        return Err(ModelError::InvalidConfig(
            "best-by-validation selection needs a validation set".into(),
        ));
    }
    let n = model.params().len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut step = 0i32;
    let mut shuffle_rng = SeededRng::new(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let (loss, mut grad) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch, batch: b, loss });
            }
            epoch_loss += loss;
            batches += 1;
            if let Some(c) = config.clip_norm {
                clip(&mut grad, c);
            }
            let params = model.params_mut();
            match config.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= config.learning_rate * g;
                    }
                }
                Optimizer::Adam => {
                    step += 1;
                    let c1 = 1.0 - config.beta1.powi(step);
                    let c2 = 1.0 - config.beta2.powi(step);
                    for j in 0..n {
                        m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
                        v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        params[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
                    }
                }
            }
        }
        let validation_loss = match validation {
            Some(val) if !val.is_empty() => Some(mean_loss(&model, val)?),
            _ => None,
        };
        if let (Selection::BestValidation, Some(vl)) = (config.selection, validation_loss) {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, model.params().to_vec()));
            }
        }
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches as f64,
            validation_loss,
        });
    }

    let mut selected_epoch = config.epochs;
    if let Some((_, epoch, params)) = best {
        model.params_mut().copy_from_slice(&params);
        selected_epoch = epoch;
    }
    Ok(TrainOutcome {
        model,
        history,
        selected_epoch,
    })
}
