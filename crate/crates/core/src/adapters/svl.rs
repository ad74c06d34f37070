use std::fs;
use std::path::{Path, PathBuf};

use super::{fit, prepare_inputs, InitScheme, TrainConfig, TrainReport, Trainable};
use crate::error::{Error, Result};
use crate::numerics::{ce_loss_and_grads, mlp_forward, Matrix, MlpParams};
use crate::rng::{stream, stream_rng};
use crate::store::{
    check_aligned, parse_key_values, read_matrix, write_atomic, write_matrix, EmbeddingTable, LabelVector,
    MatrixMetadata,
};
use crate::zeroshot::{ProbabilityMatrix, Source};

pub const DEFAULT_HIDDEN_DIM: usize = 256;

/// Two-layer head over self-supervised features: `softmax(ReLU(x·w1)·w2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub mlp: MlpParams<f32>,
    pub input_encoder_id: String,
    pub normalize_inputs: bool,
    pub seed: u64,
}

impl AdapterParams {
    pub fn hidden_dim(&self) -> usize {
        self.mlp.hidden_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Writes `<stem>.w1.emb`, `<stem>.w2.emb` and a `<stem>.adapter`
    /// key=value descriptor into `dir`. Returns the descriptor path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let w1 = format!("{stem}.w1.emb");
        let w2 = format!("{stem}.w2.emb");
        let meta = MatrixMetadata {
            encoder_id: Some(self.input_encoder_id.clone()),
            ..Default::default()
        };
        write_matrix(dir.join(&w1), &self.mlp.w1, &meta)?;
        write_matrix(dir.join(&w2), &self.mlp.w2, &meta)?;
        let text = format!(
            "hidden_dim={}\nnum_classes={}\ninput_dim={}\nencoder_id={}\nnormalize_inputs={}\nseed={}\nw1={w1}\nw2={w2}\n",
            self.hidden_dim(),
            self.num_classes(),
            self.input_dim(),
            self.input_encoder_id,
            self.normalize_inputs,
            self.seed,
        );
        let path = dir.join(format!("{stem}.adapter"));
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut kv = parse_key_values(&text)?;
        let mut get = |k: &str| {
            kv.remove(k)
                .ok_or_else(|| Error::Manifest(format!("adapter file missing {k:?}")))
        };
        let num = |k: &str, v: String| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Manifest(format!("adapter {k}: bad number {v:?}")))
        };
        let hidden = num("hidden_dim", get("hidden_dim")?)? as usize;
        let classes = num("num_classes", get("num_classes")?)? as usize;
        let input = num("input_dim", get("input_dim")?)? as usize;
        let encoder = get("encoder_id")?;
        let normalize_inputs = get("normalize_inputs")?
            .parse()
            .map_err(|_| Error::Manifest("adapter normalize_inputs: expected true/false".into()))?;
        let seed = num("seed", get("seed")?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let (w1, _) = read_matrix(base.join(get("w1")?))?;
        let (w2, _) = read_matrix(base.join(get("w2")?))?;
        if w1.shape() != (input, hidden) || w2.shape() != (hidden, classes) {
            return Err(Error::Manifest(format!(
                "adapter weight shapes {:?}/{:?} disagree with declared {input}x{hidden}x{classes}",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(Self {
            mlp: MlpParams::new(w1, w2)?,
            input_encoder_id: encoder,
            normalize_inputs,
            seed,
        })
    }
}

impl Trainable for MlpParams<f32> {
    fn block_shapes(&self) -> Vec<(usize, usize)> {
        vec![self.w1.shape(), self.w2.shape()]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix<f32>> {
        vec![&mut self.w1, &mut self.w2]
    }

    fn loss_and_grads(&self, inputs: &Matrix<f32>, labels: &[usize]) -> Result<(f32, Vec<Matrix<f32>>)> {
        let (loss, g) = ce_loss_and_grads(self, inputs, labels)?;
        Ok((loss, vec![g.w1, g.w2]))
    }
}

fn check_training_inputs(train: &EmbeddingTable, labels: &LabelVector, num_classes: usize) -> Result<()> {
    check_aligned("training", train.len(), labels.len())?;
    if labels.num_classes() != num_classes {
        return Err(Error::DimensionMismatch {
            what: "label class count".into(),
            expected: num_classes,
            found: labels.num_classes(),
        });
    }
    Ok(())
}

/// Trains the head on an episode with minibatch Adam.
pub fn train_svl_adapter(
    train: &EmbeddingTable,
    labels: &LabelVector,
    num_classes: usize,
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<(AdapterParams, TrainReport)> {
    if hidden_dim == 0 {
        return Err(Error::Config("hidden dimension must be at least 1".into()));
    }
    let init = match cfg.init.unwrap_or(InitScheme::Uniform) {
        InitScheme::Uniform => {
            let mut rng = stream_rng(cfg.seed, stream::INIT, 0);
            MlpParams::init_uniform(train.dim(), hidden_dim, num_classes, &mut rng)
        }
        InitScheme::Zeros => MlpParams::zeros(train.dim(), hidden_dim, num_classes),
    };
    train_svl_adapter_from(init, train, labels, num_classes, cfg)
}

/// Same as [`train_svl_adapter`], starting from caller-supplied weights.
pub fn train_svl_adapter_from(
    init: MlpParams<f32>,
    train: &EmbeddingTable,
    labels: &LabelVector,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(AdapterParams, TrainReport)> {
    check_training_inputs(train, labels, num_classes)?;
    if init.input_dim() != train.dim() || init.num_classes() != num_classes {
        return Err(Error::shape(
            "train_svl_adapter",
            format!("{}x?x{num_classes} head", train.dim()),
            format!("{}x{}x{}", init.input_dim(), init.hidden_dim(), init.num_classes()),
        ));
    }
    let inputs = prepare_inputs(train, cfg.normalize_inputs)?;
    let mut mlp = init;
    let report = fit(&mut mlp, &inputs, labels.as_slice(), num_classes, cfg)?;
    Ok((
        AdapterParams {
            mlp,
            input_encoder_id: train.encoder_id().to_string(),
            normalize_inputs: cfg.normalize_inputs,
            seed: cfg.seed,
        },
        report,
    ))
}

pub fn predict_svl_adapter(params: &AdapterParams, items: &EmbeddingTable) -> Result<ProbabilityMatrix> {
    if items.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "adapter input dim".into(),
            expected: params.input_dim(),
            found: items.dim(),
        });
    }
    let inputs = prepare_inputs(items, params.normalize_inputs)?;
    let (logits, _) = mlp_forward(&params.mlp, &inputs)?;
    ProbabilityMatrix::from_logits(&logits, Source::Adapter, None)
}
