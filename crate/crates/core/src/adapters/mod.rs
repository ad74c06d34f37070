//! Trainable heads over frozen embeddings.
//!
//! All three heads share one training loop: seeded shuffling, minibatches
//! that keep the last partial batch, softmax cross-entropy, and Adam.

mod clip;
mod linear;
mod svl;

pub use clip::{
    clip_loss_and_grads, predict_clip_adapter, train_clip_adapter, ClipAdapterOptions, ClipAdapterParams, ClipGrads,
    DEFAULT_REDUCTION,
};
pub use linear::{predict_linear_probe, train_linear_probe, LinearProbe};
pub use svl::{predict_svl_adapter, train_svl_adapter, train_svl_adapter_from, AdapterParams, DEFAULT_HIDDEN_DIM};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Matrix};
use crate::rng::{stream, stream_rng};
use crate::store::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`, seeded.
    Uniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// L2-normalize input rows before the head.
    pub normalize_inputs: bool,
    /// `None` picks the head's own default.
    pub init: Option<InitScheme>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 0.001,
            seed: 0,
            shuffle: true,
            normalize_inputs: true,
            init: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-batch loss before the first update.
    pub initial_loss: f32,
    /// Size-weighted mean minibatch loss per epoch.
    pub epoch_losses: Vec<f32>,
    /// Full-batch loss after training.
    pub final_loss: f32,
    /// Classes with no training example.
    pub absent_classes: Vec<usize>,
}

/// A head trainable by [`fit`].
pub(crate) trait Trainable {
    fn block_shapes(&self) -> Vec<(usize, usize)>;
    fn blocks_mut(&mut self) -> Vec<&mut Matrix<f32>>;
    fn loss_and_grads(&self, inputs: &Matrix<f32>, labels: &[usize]) -> Result<(f32, Vec<Matrix<f32>>)>;
}

pub(crate) fn absent_classes(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut seen = vec![false; num_classes];
    for &l in labels {
        if l < num_classes {
            seen[l] = true;
        }
    }
    let absent: Vec<usize> = (0..num_classes).filter(|&c| !seen[c]).collect();
    if !absent.is_empty() {
        log::warn!("classes {absent:?} have no training examples; their outputs train only through the softmax");
    }
    absent
}

pub(crate) fn fit<M: Trainable>(
    model: &mut M,
    inputs: &Matrix<f32>,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if inputs.rows() != labels.len() {
        return Err(Error::shape("fit", format!("{} labels", inputs.rows()), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    crate::numerics::check_labels(labels, num_classes)?;
    let absent = absent_classes(labels, num_classes);

    let (initial_loss, _) = model.loss_and_grads(inputs, labels)?;
    let mut adam = AdamState::new(cfg.adam(), &model.block_shapes());
    let mut rng = stream_rng(cfg.seed, stream::SHUFFLE, 0);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);

    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.select_rows(chunk);
            batch_labels.clear();
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let (loss, grads) = model.loss_and_grads(&x, &batch_labels)?;
            total += loss as f64 * chunk.len() as f64;
            let grad_refs: Vec<&Matrix<f32>> = grads.iter().collect();
            adam.step(&mut model.blocks_mut(), &grad_refs)?;
        }
        epoch_losses.push((total / labels.len() as f64) as f32);
    }

    let (final_loss, _) = model.loss_and_grads(inputs, labels)?;
    for block in model.blocks_mut() {
        block.ensure_finite("trained parameters")?;
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
        final_loss,
        absent_classes: absent,
    })
}

/// Head input features, normalized when requested.
pub(crate) fn prepare_inputs(table: &EmbeddingTable, normalize: bool) -> Result<Matrix<f32>> {
    if normalize {
        Ok(table.normalized()?.features().clone())
    } else {
        Ok(table.features().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.lr, 0.001);
        assert!(cfg.normalize_inputs);
        assert_eq!(DEFAULT_HIDDEN_DIM, 256);
        assert_eq!(DEFAULT_REDUCTION, 4);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                lr: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn absent_classes_reported() {
        assert_eq!(absent_classes(&[0, 2, 2], 4), vec![1, 3]);
        assert!(absent_classes(&[1, 0], 2).is_empty());
    }
}
