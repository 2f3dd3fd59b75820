use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_data, loss_and_grad, mean_loss, LearnError, ModelParams, Result};
use crate::dataset::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    RmsProp,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// RMSProp accumulator decay.
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::RmsProp,
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            convergence_tol: 1e-4,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(LearnError::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return bad("convergence_tol must be positive");
        }
        Ok(())
    }
}

/// Mini-batch training on `data[indices]` until the epoch loss settles.
///
/// The returned trace starts with the loss before training and then holds
/// the full-data loss after every epoch. Training stops once
/// `|loss_t - loss_{t-1}| < convergence_tol` for `patience` epochs in a
/// row, or after `max_epochs`.
pub fn train_until_converged<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &LabeledDataset,
    indices: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(ModelParams, Vec<f64>)> {
    config.validate()?;
    check_data(model, data)?;
    if indices.is_empty() {
        return Err(LearnError::EmptyData);
    }
    let arch = model.arch.clone();
    let mut params = model.flatten();
    let mut accum = vec![0.0; params.len()];
    let mut order = indices.to_vec();
    let mut current = model.clone();
    let mut losses = vec![mean_loss(&current, data, indices)?];
    let mut calm = 0;

    for _ in 0..config.max_epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let (_, grad) = loss_and_grad(&current, data, batch)?;
            match config.optimizer {
                Optimizer::RmsProp => {
                    for ((w, s), g) in params.iter_mut().zip(&mut accum).zip(&grad) {
                        *s = config.rho * *s + (1.0 - config.rho) * g * g;
                        *w -= config.learning_rate * g / (*s + config.epsilon).sqrt();
                    }
                }
                Optimizer::Sgd => {
                    for (w, g) in params.iter_mut().zip(&grad) {
                        *w -= config.learning_rate * g;
                    }
                }
            }
            current = ModelParams::unflatten(&arch, &params)?;
        }
        let loss = mean_loss(&current, data, indices)?;
        let prev = *losses.last().expect("initial loss");
        losses.push(loss);
        calm = if (loss - prev).abs() < config.convergence_tol {
            calm + 1
        } else {
            0
        };
        if calm >= config.patience {
            break;
        }
    }
    Ok((current, losses))
}

/// Writes `epoch,loss` rows; epoch 0 is the pre-training loss.
pub fn write_loss_trace_csv(path: impl AsRef<Path>, losses: &[f64]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (epoch, loss) in losses.iter().enumerate() {
        w.write_record([epoch.to_string(), format!("{loss:.6}")])?;
    }
    w.flush()
}
