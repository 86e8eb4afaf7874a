use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ResizedImage;
use crate::model::Classifier;
use crate::pipeline::argmax;
use crate::seed;

/// Samples per gradient work unit. Work units are reduced in index order, so
/// results do not depend on the number of threads.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `decay_step` epochs.
    pub decay: f64,
    pub decay_step: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            decay: 0.6,
            decay_step: 5,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Same schedule, 30 epochs.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi((epoch / self.decay_step) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("decay must lie in (0, 1]".into()));
        }
        if self.decay_step == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "decay step, epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_validation_accuracy(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.validation_accuracy)
            .fold(0.0, f64::max)
    }
}

pub type LabeledInput = (ResizedImage, usize);

/// Fraction of `data` whose argmax prediction equals the label.
pub fn accuracy_on(model: &Classifier, data: &[LabeledInput]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Precondition("accuracy of an empty set".into()));
    }
    let hits = data
        .par_iter()
        .map(|(img, y)| model.forward(img).map(|p| usize::from(argmax(&p) == *y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

fn batch_gradient(model: &Classifier, batch: &[(&ResizedImage, usize)]) -> Result<(f64, Vec<f64>)> {
    let n = batch.len() as f64;
    let parts = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let (l, g) = model.loss_and_gradient(chunk)?;
            Ok((l * chunk.len() as f64, g, chunk.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; model.parameters().len()];
    let mut loss = 0.0;
    for (l, g, m) in parts {
        loss += l;
        let w = m / n;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += w * b;
        }
    }
    Ok((loss / n, grad))
}

/// One plain SGD step on `batch`; returns the batch loss before the step.
pub fn sgd_step(model: &mut Classifier, batch: &[(&ResizedImage, usize)], lr: f64) -> Result<f64> {
    let (loss, grad) = batch_gradient(model, batch)?;
    for (p, g) in model.parameters_mut().iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    Ok(loss)
}

/// Mini-batch SGD with step decay; returns the parameters of the epoch with
/// the best validation accuracy (earliest on ties).
pub fn train(
    mut model: Classifier,
    train_set: &[LabeledInput],
    validation: &[LabeledInput],
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Precondition(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for (_, y) in train_set.iter().chain(validation) {
        model.check_label(*y)?;
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut rng = seed::child_rng(cfg.seed, &format!("epoch-{epoch}"));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&ResizedImage, usize)> =
                idx.iter().map(|&i| (&train_set[i].0, train_set[i].1)).collect();
            let loss = sgd_step(&mut model, &batch, lr)?;
            if !loss.is_finite() || model.parameters().iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * idx.len() as f64;
        }
        let val_acc = accuracy_on(&model, validation)?;
        let train_loss = loss_sum / train_set.len() as f64;
        log::debug!("epoch {epoch}: lr {lr:.4} loss {train_loss:.4} val acc {val_acc:.4}");
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            validation_accuracy: val_acc,
        });
        if best.as_ref().map_or(true, |(acc, _)| val_acc > *acc) {
            best = Some((val_acc, model.parameters().to_vec()));
            history.best_epoch = epoch;
        }
    }
    let (_, params) = best.expect("at least one epoch");
    model.parameters_mut().copy_from_slice(&params);
    Ok((model, history))
}
