use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{Model, TrainSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Rescale the gradient when its global norm exceeds this.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    7
}
fn default_decay() -> f64 {
    1e-4
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            weight_decay: default_decay(),
            seed: 0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "train config: learning_rate and batch_size must be positive, weight_decay non-negative".into(),
            ));
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return Err(Error::Config("train config: max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Supplies the training sequences for each epoch.
pub trait TrainingSource {
    fn epoch_samples(&mut self, epoch: usize) -> Result<Vec<TrainSample>>;
}

impl TrainingSource for Vec<TrainSample> {
    fn epoch_samples(&mut self, _epoch: usize) -> Result<Vec<TrainSample>> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub mmae: f64,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub validation: Validation,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MMAE, rounded through f32.
    pub best: Model,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

/// Trains `model` with Adam, validating the f32-rounded model after each epoch.
/// `on_epoch` sees every epoch's record and model, e.g. to write checkpoints.
pub fn train(
    mut model: Model,
    source: &mut dyn TrainingSource,
    cfg: &TrainConfig,
    mut validate: impl FnMut(&Model) -> Result<Validation>,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        log::warn!("epochs = 0: returning the initial model untrained");
        return Ok(TrainOutcome {
            best: model.rounded_f32(),
            best_epoch: 0,
            epochs: Vec::new(),
        });
    }
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.params);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Validation, usize, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let samples = source.epoch_samples(epoch)?;
        if samples.is_empty() {
            return Err(Error::NoSegments(format!("epoch {epoch} has no training sequences")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut frames, mut steps) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut groups: Vec<Vec<&TrainSample>> = Vec::new();
            for &i in chunk {
                let s = &samples[i];
                match groups.iter_mut().find(|g| g[0].tau.len() == s.tau.len()) {
                    Some(g) => g.push(s),
                    None => groups.push(vec![s]),
                }
            }
            for group in groups {
                let (loss, n, grads) = model.loss_and_grad(&group, Some(&mut rng), true)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}, step {steps}")));
                }
                if n == 0 {
                    continue;
                }
                let mut grads = grads.expect("gradient requested");
                if let Some(max) = cfg.max_grad_norm {
                    let norm = grads.norm();
                    if norm > max {
                        grads.scale(max / norm);
                    }
                }
                adam_step(&mut model.params, &grads, &mut state, &adam);
                loss_sum += loss * n as f64;
                frames += n;
                steps += 1;
            }
        }
        let snapshot = model.rounded_f32();
        let validation = validate(&snapshot)?;
        let record = EpochRecord {
            epoch,
            steps,
            train_loss: if frames > 0 { loss_sum / frames as f64 } else { 0.0 },
            validation,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, validation MMAE {:.4}, NLL {:.4}",
            record.train_loss,
            validation.mmae,
            validation.nll
        );
        on_epoch(&record, &snapshot)?;
        let better = match &best {
            None => true,
            Some((v, _, _)) => validation.mmae < v.mmae || (validation.mmae == v.mmae && validation.nll < v.nll),
        };
        if better {
            best = Some((validation, epoch, snapshot));
        }
        records.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        epochs: records,
    })
}
