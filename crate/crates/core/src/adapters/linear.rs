use super::{fit, prepare_inputs, InitScheme, TrainConfig, TrainReport, Trainable};
use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, uniform_fan_in, Matrix};
use crate::rng::{stream, stream_rng};
use crate::store::{check_aligned, EmbeddingTable, LabelVector};
use crate::zeroshot::{ProbabilityMatrix, Source};

/// Multinomial logistic regression on frozen features (single D×K layer).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Matrix<f32>,
    pub input_encoder_id: String,
    pub normalize_inputs: bool,
}

impl Trainable for Matrix<f32> {
    fn block_shapes(&self) -> Vec<(usize, usize)> {
        vec![self.shape()]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix<f32>> {
        vec![self]
    }

    fn loss_and_grads(&self, inputs: &Matrix<f32>, labels: &[usize]) -> Result<(f32, Vec<Matrix<f32>>)> {
        let logits = inputs.matmul(self)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, vec![inputs.t_matmul(&d_logits)?]))
    }
}

/// Trains a linear probe. Starts from zero weights unless `cfg.init` says otherwise.
pub fn train_linear_probe(
    train: &EmbeddingTable,
    labels: &LabelVector,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(LinearProbe, TrainReport)> {
    check_aligned("training", train.len(), labels.len())?;
    if labels.num_classes() != num_classes {
        return Err(Error::DimensionMismatch {
            what: "label class count".into(),
            expected: num_classes,
            found: labels.num_classes(),
        });
    }
    let mut weights = match cfg.init.unwrap_or(InitScheme::Zeros) {
        InitScheme::Zeros => Matrix::zeros(train.dim(), num_classes),
        InitScheme::Uniform => uniform_fan_in(train.dim(), num_classes, &mut stream_rng(cfg.seed, stream::INIT, 2)),
    };
    let inputs = prepare_inputs(train, cfg.normalize_inputs)?;
    let report = fit(&mut weights, &inputs, labels.as_slice(), num_classes, cfg)?;
    Ok((
        LinearProbe {
            weights,
            input_encoder_id: train.encoder_id().to_string(),
            normalize_inputs: cfg.normalize_inputs,
        },
        report,
    ))
}

pub fn predict_linear_probe(probe: &LinearProbe, items: &EmbeddingTable) -> Result<ProbabilityMatrix> {
    if items.dim() != probe.weights.rows() {
        return Err(Error::DimensionMismatch {
            what: "linear probe input dim".into(),
            expected: probe.weights.rows(),
            found: items.dim(),
        });
    }
    let inputs = prepare_inputs(items, probe.normalize_inputs)?;
    ProbabilityMatrix::from_logits(&inputs.matmul(&probe.weights)?, Source::Adapter, None)
}
