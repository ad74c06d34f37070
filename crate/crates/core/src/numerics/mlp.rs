use rand::Rng;

use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Weights of the bias-free two-layer head `ReLU(x·w1)·w2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T = f32> {
    pub w1: Matrix<T>,
    pub w2: Matrix<T>,
}

/// Hidden nonlinearity. `Identity` exists so tests can compare against the plain product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

/// Activations retained by the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct HiddenCache<T = f32> {
    pub pre_activation: Matrix<T>,
    pub activation: Matrix<T>,
    pub kind: Activation,
}

/// Samples `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` entries.
pub fn uniform_fan_in<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<T> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-bound..bound)))
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(w1: Matrix<T>, w2: Matrix<T>) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(Error::shape(
                "MlpParams::new",
                format!("w2 rows = {}", w1.cols()),
                w2.rows(),
            ));
        }
        Ok(Self { w1, w2 })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            w1: Matrix::zeros(input_dim, hidden_dim),
            w2: Matrix::zeros(hidden_dim, num_classes),
        }
    }

    pub fn init_uniform<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let w1 = uniform_fan_in(input_dim, hidden_dim, rng);
        let w2 = uniform_fan_in(hidden_dim, num_classes, rng);
        Self { w1, w2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            w1: self.w1.cast(),
            w2: self.w2.cast(),
        }
    }
}

pub fn mlp_forward<T: Scalar>(params: &MlpParams<T>, inputs: &Matrix<T>) -> Result<(Matrix<T>, HiddenCache<T>)> {
    mlp_forward_with(params, inputs, Activation::Relu)
}

pub fn mlp_forward_with<T: Scalar>(
    params: &MlpParams<T>,
    inputs: &Matrix<T>,
    kind: Activation,
) -> Result<(Matrix<T>, HiddenCache<T>)> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::shape(
            "mlp_forward",
            format!("{} input columns", params.input_dim()),
            inputs.cols(),
        ));
    }
    let pre_activation = inputs.matmul(&params.w1)?;
    let activation = pre_activation.map(|v| kind.apply(v));
    let logits = activation.matmul(&params.w2)?;
    Ok((
        logits,
        HiddenCache {
            pre_activation,
            activation,
            kind,
        },
    ))
}

pub(crate) fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= num_classes) {
        Some(row) => Err(Error::InvalidLabel {
            row,
            label: labels[row],
            num_classes,
        }),
        None => Ok(()),
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if logits.rows() != labels.len() {
        return Err(Error::shape("softmax_cross_entropy", logits.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("cross-entropy batch"));
    }
    check_labels(labels, logits.cols())?;
    logits.ensure_finite("logits")?;

    let n = labels.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut exps = vec![0.0f64; logits.cols()];
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let mut total = 0.0;
        for (e, v) in exps.iter_mut().zip(row) {
            *e = (v.as_f64() - max).exp();
            total += *e;
        }
        loss += total.ln() + max - row[label].as_f64();
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            *g = T::of((exps[c] / total - target) / n);
        }
    }
    Ok((T::of(loss / n), grad))
}

/// Mean cross-entropy of the head on `(inputs, labels)` and exact gradients for `w1`, `w2`.
pub fn ce_loss_and_grads<T: Scalar>(
    params: &MlpParams<T>,
    inputs: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, MlpParams<T>)> {
    ce_loss_and_grads_with(params, inputs, labels, Activation::Relu)
}

pub fn ce_loss_and_grads_with<T: Scalar>(
    params: &MlpParams<T>,
    inputs: &Matrix<T>,
    labels: &[usize],
    kind: Activation,
) -> Result<(T, MlpParams<T>)> {
    let (logits, cache) = mlp_forward_with(params, inputs, kind)?;
    let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;

    let d_w2 = cache.activation.t_matmul(&d_logits)?;
    let mut d_hidden = d_logits.matmul_t(&params.w2)?;
    for (d, &pre) in d_hidden.as_mut_slice().iter_mut().zip(cache.pre_activation.as_slice()) {
        *d = *d * kind.derivative(pre);
    }
    let d_w1 = inputs.t_matmul(&d_hidden)?;
    Ok((loss, MlpParams { w1: d_w1, w2: d_w2 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_first_layer_gives_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MlpParams::<f64>::init_uniform(3, 4, 2, &mut rng);
        p.w1 = Matrix::zeros(3, 4);
        let x = Matrix::from_fn(5, 3, |r, c| (r as f64) - (c as f64) * 0.7);
        let (logits, _) = mlp_forward(&p, &x).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_hand_example() {
        let p = MlpParams::new(
            Matrix::new(1, 1, vec![2.0]).unwrap(),
            Matrix::new(1, 1, vec![3.0]).unwrap(),
        )
        .unwrap();
        let x = Matrix::new(2, 1, vec![1.0, -1.0]).unwrap();
        let (logits, _) = mlp_forward(&p, &x).unwrap();
        assert_eq!(logits.as_slice(), &[6.0, 0.0]);
    }

    #[test]
    fn identity_weights_pass_nonnegative_input() {
        let p = MlpParams::new(Matrix::<f32>::identity(4), Matrix::identity(4)).unwrap();
        let x = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f32 * 0.25);
        let (logits, _) = mlp_forward(&p, &x).unwrap();
        assert_eq!(logits, x);
    }

    #[test]
    fn identity_activation_matches_plain_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = MlpParams::<f32>::init_uniform(6, 5, 3, &mut rng);
        let x: Matrix<f32> = uniform_fan_in(4, 6, &mut rng);
        let (logits, _) = mlp_forward_with(&p, &x, Activation::Identity).unwrap();
        let plain = x.matmul(&p.w1).unwrap().matmul(&p.w2).unwrap();
        for (a, b) in logits.as_slice().iter().zip(plain.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = MlpParams::<f32>::zeros(3, 2, 2);
        let x = Matrix::zeros(1, 4);
        assert!(matches!(mlp_forward(&p, &x), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_params_loss_is_ln_k() {
        let p = MlpParams::<f64>::zeros(5, 3, 4);
        let x = Matrix::from_fn(6, 5, |r, c| (r + c) as f64);
        for labels in [[0, 1, 2, 3, 0, 1], [3, 3, 3, 3, 3, 3]] {
            let (loss, grads) = ce_loss_and_grads(&p, &x, &labels).unwrap();
            assert!((loss - 4f64.ln()).abs() < 1e-12);
            assert!(grads.w1.as_slice().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn confident_prediction_has_vanishing_loss() {
        let p = MlpParams::new(
            Matrix::new(1, 1, vec![1.0]).unwrap(),
            Matrix::new(1, 2, vec![50.0, -50.0]).unwrap(),
        )
        .unwrap();
        let x = Matrix::new(1, 1, vec![1.0f64]).unwrap();
        let (loss, grads) = ce_loss_and_grads(&p, &x, &[0]).unwrap();
        assert!(loss < 1e-40);
        assert!(grads
            .w1
            .as_slice()
            .iter()
            .chain(grads.w2.as_slice())
            .all(|g| g.abs() < 1e-40));
    }

    #[test]
    fn out_of_range_label() {
        let p = MlpParams::<f32>::zeros(2, 2, 3);
        let x = Matrix::zeros(2, 2);
        let err = ce_loss_and_grads(&p, &x, &[0, 3]).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidLabel {
                row: 1,
                label: 3,
                num_classes: 3
            }
        ));
    }
}
