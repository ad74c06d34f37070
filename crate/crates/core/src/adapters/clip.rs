//! Residual feature adapters on the vision-language embeddings (the
//! CLIP-Adapter baseline).
//!
//! ```text
//! f* = alpha * ReLU(f·Wv1)·Wv2 + (1 - alpha) * f
//! T* = beta  * ReLU(T·Wt1)·Wt2 + (1 - beta)  * T      (T: K×D class text rows)
//! P  = softmax(temperature * cos(f*, T*))
//! ```
//!
//! Mixing happens on the raw embeddings; cosine normalization comes after, so
//! `alpha = beta = 0` reproduces zero-shot scoring exactly.

use rand::Rng;

use super::{fit, InitScheme, TrainConfig, TrainReport, Trainable};
use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, uniform_fan_in, Matrix, Scalar};
use crate::rng::{stream, stream_rng};
use crate::store::{check_aligned, ClassSpace, EmbeddingTable, LabelVector};
use crate::zeroshot::{cosine_logits, ProbabilityMatrix, Source, DEFAULT_TEMPERATURE};

/// Bottleneck ratio: the hidden layer has `dim / reduction` units.
pub const DEFAULT_REDUCTION: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ClipAdapterParams<T = f32> {
    pub wv1: Matrix<T>,
    pub wv2: Matrix<T>,
    pub wt1: Matrix<T>,
    pub wt2: Matrix<T>,
    pub alpha: f64,
    pub beta: f64,
    /// Text adapter disabled; `beta` is treated as zero.
    pub visual_only: bool,
    pub temperature: f64,
}

/// Gradients of the adapter weights. Text blocks are absent in visual-only mode.
#[derive(Debug, Clone)]
pub struct ClipGrads<T = f32> {
    pub wv1: Matrix<T>,
    pub wv2: Matrix<T>,
    pub wt: Option<(Matrix<T>, Matrix<T>)>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl<T: Scalar> ClipAdapterParams<T> {
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        reduction: usize,
        alpha: f64,
        beta: f64,
        visual_only: bool,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        check_unit("alpha", alpha)?;
        check_unit("beta", beta)?;
        if reduction == 0 || dim == 0 {
            return Err(Error::Config("adapter dim and reduction must be positive".into()));
        }
        let hidden = (dim / reduction).max(1);
        let mut block = |r, c| match scheme {
            InitScheme::Uniform => uniform_fan_in(r, c, rng),
            InitScheme::Zeros => Matrix::zeros(r, c),
        };
        Ok(Self {
            wv1: block(dim, hidden),
            wv2: block(hidden, dim),
            wt1: block(dim, hidden),
            wt2: block(hidden, dim),
            alpha,
            beta,
            visual_only,
            temperature: DEFAULT_TEMPERATURE,
        })
    }

    pub fn dim(&self) -> usize {
        self.wv1.rows()
    }

    pub fn effective_beta(&self) -> f64 {
        if self.visual_only {
            0.0
        } else {
            self.beta
        }
    }

    /// `f*` for every row of `features`.
    pub fn adapt_features(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        residual_mix(features, &self.wv1, &self.wv2, self.alpha).map(|b| b.mixed)
    }

    /// `T*` for the K×D class text rows.
    pub fn adapt_text(&self, text: &Matrix<T>) -> Result<Matrix<T>> {
        residual_mix(text, &self.wt1, &self.wt2, self.effective_beta()).map(|b| b.mixed)
    }

    pub fn cast<U: Scalar>(&self) -> ClipAdapterParams<U> {
        ClipAdapterParams {
            wv1: self.wv1.cast(),
            wv2: self.wv2.cast(),
            wt1: self.wt1.cast(),
            wt2: self.wt2.cast(),
            alpha: self.alpha,
            beta: self.beta,
            visual_only: self.visual_only,
            temperature: self.temperature,
        }
    }
}

struct Branch<T> {
    pre: Matrix<T>,
    act: Matrix<T>,
    mixed: Matrix<T>,
}

/// `ratio * ReLU(x·w1)·w2 + (1 - ratio) * x`, with exact endpoints.
fn residual_mix<T: Scalar>(x: &Matrix<T>, w1: &Matrix<T>, w2: &Matrix<T>, ratio: f64) -> Result<Branch<T>> {
    if x.cols() != w1.rows() {
        return Err(Error::DimensionMismatch {
            what: "adapter input dim".into(),
            expected: w1.rows(),
            found: x.cols(),
        });
    }
    let pre = x.matmul(w1)?;
    let act = pre.map(|v| v.max(T::zero()));
    let out = act.matmul(w2)?;
    let mixed = if ratio == 0.0 {
        x.clone()
    } else if ratio == 1.0 {
        out
    } else {
        out.axpby(T::of(ratio), x, T::of(1.0 - ratio))?
    };
    Ok(Branch { pre, act, mixed })
}

fn normalize_with_norms<T: Scalar>(m: &Matrix<T>, what: &'static str) -> Result<(Matrix<T>, Vec<T>)> {
    let norms = m.row_norms();
    let mut out = m.clone();
    for (r, &n) in norms.iter().enumerate() {
        if !(n > T::zero()) {
            return Err(Error::DegenerateEmbedding { what, row: r });
        }
        for v in out.row_mut(r) {
            *v = *v / n;
        }
    }
    Ok((out, norms))
}

/// Backprop through `u = v / |v|` row by row.
fn normalize_backward<T: Scalar>(unit: &Matrix<T>, norms: &[T], d_unit: &Matrix<T>) -> Matrix<T> {
    let mut out = d_unit.clone();
    for (r, &norm) in norms.iter().enumerate().take(unit.rows()) {
        let u = unit.row(r);
        let proj = u.iter().zip(d_unit.row(r)).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        for (o, &ui) in out.row_mut(r).iter_mut().zip(u) {
            *o = (*o - ui * proj) / norm;
        }
    }
    out
}

/// Gradients of the two branch weights given the gradient at the mix output.
fn branch_backward<T: Scalar>(
    x: &Matrix<T>,
    w2: &Matrix<T>,
    branch: &Branch<T>,
    ratio: f64,
    d_mixed: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let d_out = d_mixed.scale(T::of(ratio));
    let d_w2 = branch.act.t_matmul(&d_out)?;
    let mut d_pre = d_out.matmul_t(w2)?;
    for (d, &p) in d_pre.as_mut_slice().iter_mut().zip(branch.pre.as_slice()) {
        if !(p > T::zero()) {
            *d = T::zero();
        }
    }
    let d_w1 = x.t_matmul(&d_pre)?;
    Ok((d_w1, d_w2))
}

/// Mean cross-entropy of `softmax(temperature * cos(f*, T*))` and exact
/// gradients for the adapter weights.
pub fn clip_loss_and_grads<T: Scalar>(
    params: &ClipAdapterParams<T>,
    features: &Matrix<T>,
    text: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, ClipGrads<T>)> {
    let beta = params.effective_beta();
    let vis = residual_mix(features, &params.wv1, &params.wv2, params.alpha)?;
    let txt = residual_mix(text, &params.wt1, &params.wt2, beta)?;
    let (f_unit, f_norms) = normalize_with_norms(&vis.mixed, "adapted image features")?;
    let (t_unit, t_norms) = normalize_with_norms(&txt.mixed, "adapted class text embeddings")?;
    let temp = T::of(params.temperature);
    let logits = f_unit.matmul_t(&t_unit)?.scale(temp);
    let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;

    let d_f_unit = d_logits.matmul(&t_unit)?.scale(temp);
    let d_f = normalize_backward(&f_unit, &f_norms, &d_f_unit);
    let (wv1, wv2) = branch_backward(features, &params.wv2, &vis, params.alpha, &d_f)?;

    let wt = if params.visual_only {
        None
    } else {
        let d_t_unit = d_logits.t_matmul(&f_unit)?.scale(temp);
        let d_t = normalize_backward(&t_unit, &t_norms, &d_t_unit);
        Some(branch_backward(text, &params.wt2, &txt, beta, &d_t)?)
    };
    Ok((loss, ClipGrads { wv1, wv2, wt }))
}

struct ClipTrainer<'a> {
    params: ClipAdapterParams<f32>,
    text: &'a Matrix<f32>,
}

impl Trainable for ClipTrainer<'_> {
    fn block_shapes(&self) -> Vec<(usize, usize)> {
        let p = &self.params;
        let mut shapes = vec![p.wv1.shape(), p.wv2.shape()];
        if !p.visual_only {
            shapes.extend([p.wt1.shape(), p.wt2.shape()]);
        }
        shapes
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix<f32>> {
        let p = &mut self.params;
        if p.visual_only {
            vec![&mut p.wv1, &mut p.wv2]
        } else {
            vec![&mut p.wv1, &mut p.wv2, &mut p.wt1, &mut p.wt2]
        }
    }

    fn loss_and_grads(&self, inputs: &Matrix<f32>, labels: &[usize]) -> Result<(f32, Vec<Matrix<f32>>)> {
        let (loss, g) = clip_loss_and_grads(&self.params, inputs, self.text, labels)?;
        let mut blocks = vec![g.wv1, g.wv2];
        if let Some((t1, t2)) = g.wt {
            blocks.extend([t1, t2]);
        }
        Ok((loss, blocks))
    }
}

/// Adapter hyperparameters held fixed during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipAdapterOptions {
    pub alpha: f64,
    pub beta: f64,
    pub visual_only: bool,
    pub reduction: usize,
    pub temperature: f64,
}

impl Default for ClipAdapterOptions {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.2,
            visual_only: true,
            reduction: DEFAULT_REDUCTION,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

pub fn train_clip_adapter(
    train: &EmbeddingTable,
    labels: &LabelVector,
    classes: &ClassSpace,
    opts: &ClipAdapterOptions,
    cfg: &TrainConfig,
) -> Result<(ClipAdapterParams<f32>, TrainReport)> {
    let text = classes.text_embeddings().ok_or(Error::MissingTextEmbeddings)?;
    check_aligned("training", train.len(), labels.len())?;
    if text.cols() != train.dim() {
        return Err(Error::DimensionMismatch {
            what: "class text embedding dim".into(),
            expected: train.dim(),
            found: text.cols(),
        });
    }
    if labels.num_classes() != classes.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "label class count".into(),
            expected: classes.num_classes(),
            found: labels.num_classes(),
        });
    }
    let mut rng = stream_rng(cfg.seed, stream::INIT, 1);
    let mut params = ClipAdapterParams::init(
        train.dim(),
        opts.reduction,
        opts.alpha,
        opts.beta,
        opts.visual_only,
        cfg.init.unwrap_or(InitScheme::Uniform),
        &mut rng,
    )?;
    params.temperature = opts.temperature;
    let mut trainer = ClipTrainer { params, text };
    let report = fit(
        &mut trainer,
        train.features(),
        labels.as_slice(),
        classes.num_classes(),
        cfg,
    )?;
    Ok((trainer.params, report))
}

pub fn predict_clip_adapter(
    params: &ClipAdapterParams<f32>,
    items: &EmbeddingTable,
    classes: &ClassSpace,
) -> Result<ProbabilityMatrix> {
    let text = classes.text_embeddings().ok_or(Error::MissingTextEmbeddings)?;
    let f_star = params.adapt_features(items.features())?;
    let t_star = params.adapt_text(text)?;
    let logits = cosine_logits(&f_star, &t_star, params.temperature)?;
    ProbabilityMatrix::from_logits(&logits, Source::Adapter, Some(params.temperature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_differences, compare_block};
    use crate::zeroshot::zero_shot_probs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn classes(k: usize, d: usize, seed: u64) -> ClassSpace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text: Matrix<f32> = uniform_fan_in(k, d, &mut rng);
        ClassSpace::new((0..k).map(|i| format!("c{i}")).collect(), Some(text)).unwrap()
    }

    fn items(n: usize, d: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable::from_features(uniform_fan_in(n, d, &mut rng), "clip").unwrap()
    }

    fn params(d: usize, alpha: f64, beta: f64, visual_only: bool, seed: u64) -> ClipAdapterParams<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClipAdapterParams::init(d, 2, alpha, beta, visual_only, InitScheme::Uniform, &mut rng).unwrap()
    }

    #[test]
    fn alpha_zero_keeps_features_and_predictions() {
        let p = params(8, 0.0, 0.0, true, 1);
        let x = items(5, 8, 2);
        assert_eq!(p.adapt_features(x.features()).unwrap(), *x.features());
        let cs = classes(3, 8, 3);
        let adapted = predict_clip_adapter(&p, &x, &cs).unwrap();
        let zs = zero_shot_probs(&x, &cs, DEFAULT_TEMPERATURE).unwrap();
        assert_eq!(adapted.probs(), zs.probs());
    }

    #[test]
    fn alpha_one_is_pure_adapter_output() {
        let p = params(8, 1.0, 0.0, true, 4);
        let x = items(3, 8, 5);
        let expected = x
            .features()
            .matmul(&p.wv1)
            .unwrap()
            .map(|v| v.max(0.0))
            .matmul(&p.wv2)
            .unwrap();
        assert_eq!(p.adapt_features(x.features()).unwrap(), expected);
    }

    #[test]
    fn hand_example_d4_r2() {
        let wv1 = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0]]).unwrap();
        let wv2 = Matrix::from_rows(&[[1.0f32, 0.0, 0.0, 2.0], [0.0, 1.0, 1.0, 0.0]]).unwrap();
        let wt1 = Matrix::from_rows(&[[0.5f32, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        let wt2 = Matrix::from_rows(&[[0.0f32, 2.0, 0.0, 0.0], [1.0, 0.0, 0.0, 1.0]]).unwrap();
        let p = ClipAdapterParams {
            wv1,
            wv2,
            wt1,
            wt2,
            alpha: 0.5,
            beta: 0.25,
            visual_only: false,
            temperature: 1.0,
        };
        // f = [1, 2, 3, -1]: hidden = ReLU([4, 3]) = [4, 3]; A = [4, 3, 3, 8]
        // f* = 0.5 A + 0.5 f = [2.5, 2.5, 3, 3.5]
        let f = Matrix::from_rows(&[[1.0f32, 2.0, 3.0, -1.0]]).unwrap();
        assert_eq!(p.adapt_features(&f).unwrap().row(0), &[2.5, 2.5, 3.0, 3.5]);
        // t = [2, 0, -1, 1]: hidden = ReLU([1, -1]) = [1, 0]; A = [0, 2, 0, 0]
        // T* = 0.25 A + 0.75 t = [1.5, 0.5, -0.75, 0.75]
        let t = Matrix::from_rows(&[[2.0f32, 0.0, -1.0, 1.0]]).unwrap();
        let ts = p.adapt_text(&t).unwrap();
        for (a, b) in ts.row(0).iter().zip([1.5f32, 0.5, -0.75, 0.75]) {
            assert!((a - b).abs() < 1e-5);
        }
        let visual = ClipAdapterParams { visual_only: true, ..p };
        assert_eq!(visual.adapt_text(&t).unwrap(), t);
    }

    #[test]
    fn visual_only_ignores_text_weights() {
        let x = items(4, 8, 6);
        let cs = classes(3, 8, 7);
        let a = params(8, 0.6, 0.9, true, 8);
        let mut b = a.clone();
        b.wt1 = b.wt1.scale(-3.0);
        b.wt2 = Matrix::zeros(b.wt2.rows(), b.wt2.cols());
        let pa = predict_clip_adapter(&a, &x, &cs).unwrap();
        let pb = predict_clip_adapter(&b, &x, &cs).unwrap();
        assert_eq!(pa.probs(), pb.probs());
        for row in pa.probs().row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    fn check_grads(visual_only: bool, seed: u64) {
        let p64: ClipAdapterParams<f64> = params(6, 0.4, 0.3, visual_only, seed).cast();
        let p64 = ClipAdapterParams {
            temperature: 5.0,
            ..p64
        };
        let x: Matrix<f64> = items(5, 6, seed + 100).features().cast::<f64>().scale(4.0);
        let text: Matrix<f64> = classes(3, 6, seed + 200)
            .text_embeddings()
            .unwrap()
            .cast::<f64>()
            .scale(4.0);
        let labels = [0, 2, 1, 1, 0];
        let (_, g) = clip_loss_and_grads(&p64, &x, &text, &labels).unwrap();
        let loss_with = |q: &ClipAdapterParams<f64>| clip_loss_and_grads(q, &x, &text, &labels).map(|r| r.0);

        let n = central_differences(&p64.wv1, 1e-5, |w| {
            loss_with(&ClipAdapterParams {
                wv1: w.clone(),
                ..p64.clone()
            })
        })
        .unwrap();
        assert!(
            compare_block("wv1", &g.wv1, &n, 1e-4).passed,
            "{:?}",
            compare_block("wv1", &g.wv1, &n, 1e-4)
        );
        let n = central_differences(&p64.wv2, 1e-5, |w| {
            loss_with(&ClipAdapterParams {
                wv2: w.clone(),
                ..p64.clone()
            })
        })
        .unwrap();
        assert!(compare_block("wv2", &g.wv2, &n, 1e-4).passed);

        match g.wt {
            None => assert!(visual_only),
            Some((gt1, gt2)) => {
                let n = central_differences(&p64.wt1, 1e-5, |w| {
                    loss_with(&ClipAdapterParams {
                        wt1: w.clone(),
                        ..p64.clone()
                    })
                })
                .unwrap();
                assert!(compare_block("wt1", &gt1, &n, 1e-4).passed);
                let n = central_differences(&p64.wt2, 1e-5, |w| {
                    loss_with(&ClipAdapterParams {
                        wt2: w.clone(),
                        ..p64.clone()
                    })
                })
                .unwrap();
                assert!(compare_block("wt2", &gt2, &n, 1e-4).passed);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            check_grads(true, seed);
            check_grads(false, seed);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_seeded() {
        let x = items(30, 8, 9);
        let cs = classes(3, 8, 10);
        let labels = LabelVector::new((0..30).map(|i| i % 3).collect(), 3).unwrap();
        let opts = ClipAdapterOptions {
            alpha: 0.5,
            beta: 0.5,
            visual_only: false,
            reduction: 2,
            temperature: 10.0,
        };
        let cfg = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        let (a, report) = train_clip_adapter(&x, &labels, &cs, &opts, &cfg).unwrap();
        assert!(report.final_loss < report.initial_loss);
        let (b, _) = train_clip_adapter(&x, &labels, &cs, &opts, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn requires_text_embeddings() {
        let x = items(2, 4, 1);
        let bare = ClassSpace::new(vec!["a".into(), "b".into()], None).unwrap();
        let labels = LabelVector::new(vec![0, 1], 2).unwrap();
        let err = train_clip_adapter(
            &x,
            &labels,
            &bare,
            &ClipAdapterOptions::default(),
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::MissingTextEmbeddings)));
    }

    #[test]
    fn rejects_out_of_range_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ClipAdapterParams::<f32>::init(4, 2, 1.5, 0.0, true, InitScheme::Uniform, &mut rng).is_err());
    }
}
