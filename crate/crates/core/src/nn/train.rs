use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, AdamState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub grad_clip_l2: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-3,
            dropout: 0.0,
            max_epochs: 150,
            early_stopping_patience: 10,
            grad_clip_l2: 4.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.grad_clip_l2 > 0.0) {
            return Err(Error::config("learning_rate and grad_clip_l2 must be positive"));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 0.5]"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be positive"));
        }
        Ok(())
    }
}

/// A model trainable by [`train_loop`]: parameters exposed as slices and a
/// loss with a flat gradient in the same order.
pub trait Trainable: Clone {
    type Batch;

    fn n_params(&self) -> usize;

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn loss_and_gradient(&self, batch: &Self::Batch, dropout: f64, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)>;

    /// Loss in evaluation mode (no dropout).
    fn evaluation_loss(&self, batch: &Self::Batch) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Snapshot with the lowest validation loss.
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl<M> TrainOutcome<M> {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Runs Adam with global-norm clipping for up to `max_epochs`, stopping once
/// the validation loss has not improved for `early_stopping_patience`
/// consecutive epochs. `epoch_batches` supplies each epoch's minibatches and
/// receives the run's RNG so that batch construction is reproducible.
pub fn train_loop<M, F>(mut model: M, mut epoch_batches: F, validation: &M::Batch, config: &TrainConfig) -> Result<TrainOutcome<M>>
where
    M: Trainable,
    F: FnMut(usize, &mut ChaCha8Rng) -> Vec<M::Batch>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.n_params());
    let mut best: Option<(f64, usize, M)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        let batches = epoch_batches(epoch, &mut rng);
        if batches.is_empty() {
            return Err(Error::EmptyInput("epoch produced no batches"));
        }
        let mut total = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let (loss, mut grads) = model.loss_and_gradient(batch, config.dropout, &mut rng)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                log::error!("non-finite loss or gradient at epoch {epoch}, step {step}");
                return Err(Error::NonFiniteGradient { epoch, step });
            }
            total += loss;
            adam.step(
                &mut model.param_slices_mut(),
                &mut grads,
                config.learning_rate,
                config.grad_clip_l2,
                &config.adam,
            )?;
        }
        let validation_loss = model.evaluation_loss(validation)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / batches.len() as f64,
            validation_loss,
        };
        log::debug!("epoch {epoch}: train {:.6} validation {:.6}", record.train_loss, validation_loss);
        history.push(record);
        let improved = best.as_ref().is_none_or(|(b, _, _)| validation_loss < *b);
        if improved {
            best = Some((validation_loss, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stopping_patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
