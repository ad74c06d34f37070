//! Zero-shot classification from image and class-text embeddings, confidence
//! statistics, and the confidence-based blending weight.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax, Matrix, Scalar};
use crate::store::{ClassSpace, EmbeddingTable};

/// Logit scale applied to cosine similarities before the softmax.
pub const DEFAULT_TEMPERATURE: f64 = 100.0;

/// Tolerance for row sums of probability matrices.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    ZeroShot,
    Adapter,
    Fused,
    External,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::ZeroShot => "zero-shot",
            Source::Adapter => "adapter",
            Source::Fused => "fused",
            Source::External => "external",
        })
    }
}

/// N×K row-stochastic predictions.
///
/// Probabilities are held in `f64` even though features and weights are `f32`;
/// blending and confidence averaging then stay exact to well below the
/// row-sum tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    probs: Matrix<f64>,
    source: Source,
    temperature_used: Option<f64>,
}

impl ProbabilityMatrix {
    /// Wraps an existing matrix after checking it is row-stochastic.
    pub fn new(probs: Matrix<f64>, source: Source) -> Result<Self> {
        for (r, row) in probs.row_iter().enumerate() {
            if let Some(c) = row.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "probability ({r}, {c}) = {} is not a valid probability",
                    row[c]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("probability row {r} sums to {sum}")));
            }
        }
        Ok(Self {
            probs,
            source,
            temperature_used: None,
        })
    }

    /// Softmax of `logits`.
    pub fn from_logits<T: Scalar>(logits: &Matrix<T>, source: Source, temperature_used: Option<f64>) -> Result<Self> {
        let probs = softmax(&logits.cast::<f64>())?;
        Ok(Self {
            probs,
            source,
            temperature_used,
        })
    }

    pub(crate) fn from_parts_unchecked(probs: Matrix<f64>, source: Source, temperature_used: Option<f64>) -> Self {
        Self {
            probs,
            source,
            temperature_used,
        }
    }

    pub fn probs(&self) -> &Matrix<f64> {
        &self.probs
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn temperature_used(&self) -> Option<f64> {
        self.temperature_used
    }

    pub fn num_items(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    /// Predicted class per row, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs.row_iter().map(argmax).collect()
    }

    /// Largest probability per row.
    pub fn max_confidences(&self) -> Vec<f64> {
        self.probs
            .row_iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            probs: self.probs.select_rows(indices),
            ..self.clone()
        }
    }
}

/// `temperature × cos(image_i, class_k)` for every pair.
pub fn cosine_logits(images: &Matrix<f32>, classes: &Matrix<f32>, temperature: f64) -> Result<Matrix<f64>> {
    if images.cols() != classes.cols() {
        return Err(Error::DimensionMismatch {
            what: "image vs class text embedding dim".into(),
            expected: classes.cols(),
            found: images.cols(),
        });
    }
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(Error::Config(format!(
            "temperature must be finite and >= 0, got {temperature}"
        )));
    }
    let images = images.l2_normalize_rows().map_err(|row| Error::DegenerateEmbedding {
        what: "image embeddings",
        row,
    })?;
    let classes = classes.l2_normalize_rows().map_err(|row| Error::DegenerateEmbedding {
        what: "class text embeddings",
        row,
    })?;
    let cos = images.matmul_t(&classes)?;
    Ok(cos.cast::<f64>().scale(temperature))
}

/// Zero-shot class probabilities: softmax of temperature-scaled cosine similarity.
pub fn zero_shot_probs(images: &EmbeddingTable, classes: &ClassSpace, temperature: f64) -> Result<ProbabilityMatrix> {
    let text = classes.text_embeddings().ok_or(Error::MissingTextEmbeddings)?;
    let logits = cosine_logits(images.features(), text, temperature)?;
    ProbabilityMatrix::from_logits(&logits, Source::ZeroShot, Some(temperature))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMethod {
    AutoConfidence,
    ValidationSweep,
    Fixed,
}

impl fmt::Display for LambdaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaMethod::AutoConfidence => "auto",
            LambdaMethod::ValidationSweep => "sweep",
            LambdaMethod::Fixed => "fixed",
        })
    }
}

/// A blending weight and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaEstimate {
    pub value: f64,
    pub num_items: usize,
    pub method: LambdaMethod,
}

impl LambdaEstimate {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::LambdaOutOfRange(value));
        }
        Ok(Self {
            value,
            num_items: 0,
            method: LambdaMethod::Fixed,
        })
    }
}

/// How a run chooses its blending weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Auto,
    Sweep,
    Fixed(f64),
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaMode::Auto => f.write_str("auto"),
            LambdaMode::Sweep => f.write_str("sweep"),
            LambdaMode::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for LambdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(LambdaMode::Auto),
            "sweep" => Ok(LambdaMode::Sweep),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::Config(format!("lambda must be auto, sweep or a number, got {other:?}")))?;
                LambdaEstimate::fixed(v)?;
                Ok(LambdaMode::Fixed(v))
            }
        }
    }
}

/// Mean over items of the maximum class probability.
pub fn estimate_lambda(probs: &ProbabilityMatrix) -> Result<LambdaEstimate> {
    let n = probs.num_items();
    if n == 0 || probs.num_classes() == 0 {
        return Err(Error::EmptyInput("probability matrix for lambda estimation"));
    }
    let total: f64 = probs.max_confidences().iter().sum();
    Ok(LambdaEstimate {
        value: (total / n as f64).clamp(0.0, 1.0),
        num_items: n,
        method: LambdaMethod::AutoConfidence,
    })
}

/// Counts over uniform bins on `[0, 1]`; bins are `[lo, hi)` except the last,
/// which is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let b = self.num_bins() as f64;
        (bin as f64 / b, (bin + 1) as f64 / b)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(i);
            out.push_str(&format!("{lo},{hi},{c}\n"));
        }
        out
    }
}

pub fn histogram(values: &[f64], num_bins: usize) -> Result<Histogram> {
    if num_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let b = num_bins as f64;
    let mut counts = vec![0; num_bins];
    for &v in values {
        let v = v.clamp(0.0, 1.0);
        let mut idx = ((v * b).floor() as usize).min(num_bins - 1);
        // align with the edges reported by `bin_edges`
        if idx + 1 < num_bins && v >= (idx + 1) as f64 / b {
            idx += 1;
        } else if idx > 0 && v < idx as f64 / b {
            idx -= 1;
        }
        counts[idx] += 1;
    }
    Ok(Histogram { counts })
}

/// Histogram of each row's maximum probability.
pub fn confidence_histogram(probs: &ProbabilityMatrix, num_bins: usize) -> Result<Histogram> {
    histogram(&probs.max_confidences(), num_bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(rows: &[&[f64]]) -> ProbabilityMatrix {
        ProbabilityMatrix::new(Matrix::from_rows(rows).unwrap(), Source::External).unwrap()
    }

    fn orthogonal_classes(k: usize, d: usize) -> ClassSpace {
        let text = Matrix::from_fn(k, d, |r, c| if r == c { 1.0 } else { 0.0 });
        ClassSpace::new((0..k).map(|i| format!("c{i}")).collect(), Some(text)).unwrap()
    }

    #[test]
    fn matching_image_is_near_one_hot() {
        let classes = orthogonal_classes(4, 6);
        let img = Matrix::from_fn(1, 6, |_, c| if c == 2 { 1.0 } else { 0.0 });
        let p = zero_shot_probs(&EmbeddingTable::from_features(img, "clip").unwrap(), &classes, 100.0).unwrap();
        assert_eq!(p.argmax(), vec![2]);
        for c in 0..4 {
            let target = if c == 2 { 1.0 } else { 0.0 };
            assert!((p.probs().get(0, c) - target).abs() < 1e-4);
        }
        assert_eq!(p.temperature_used(), Some(100.0));
    }

    #[test]
    fn zero_temperature_is_uniform() {
        let classes = orthogonal_classes(3, 3);
        let img = Matrix::from_rows(&[[0.3f32, -2.0, 1.0], [5.0, 1.0, 0.0]]).unwrap();
        let p = zero_shot_probs(&EmbeddingTable::from_features(img, "clip").unwrap(), &classes, 0.0).unwrap();
        assert!(p.probs().as_slice().iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn rescaled_row_gives_same_output() {
        let classes = orthogonal_classes(3, 4);
        let img = Matrix::from_rows(&[[0.3f32, -0.2, 0.5, 0.1], [1.5, -1.0, 2.5, 0.5]]).unwrap();
        let p = zero_shot_probs(&EmbeddingTable::from_features(img, "clip").unwrap(), &classes, 100.0).unwrap();
        for c in 0..3 {
            assert!((p.probs().get(0, c) - p.probs().get(1, c)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_norm_and_missing_text_are_errors() {
        let classes = orthogonal_classes(2, 2);
        let img = EmbeddingTable::from_features(Matrix::zeros(1, 2), "clip").unwrap();
        assert!(matches!(
            zero_shot_probs(&img, &classes, 100.0),
            Err(Error::DegenerateEmbedding { row: 0, .. })
        ));
        let bare = ClassSpace::new(vec!["a".into(), "b".into()], None).unwrap();
        assert!(matches!(
            zero_shot_probs(&img, &bare, 100.0),
            Err(Error::MissingTextEmbeddings)
        ));
    }

    #[test]
    fn lambda_cases() {
        let uniform = pm(&[&[0.25; 4], &[0.25; 4]]);
        assert_eq!(estimate_lambda(&uniform).unwrap().value, 0.25);
        let one_hot = pm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(estimate_lambda(&one_hot).unwrap().value, 1.0);
        let mixed = pm(&[&[0.9, 0.1], &[0.5, 0.5], &[0.3, 0.7]]);
        let est = estimate_lambda(&mixed).unwrap();
        assert!((est.value - 0.7).abs() < 1e-12);
        assert_eq!(est.num_items, 3);
        assert_eq!(est.method, LambdaMethod::AutoConfidence);
    }

    #[test]
    fn lambda_of_empty_matrix_fails() {
        let empty = ProbabilityMatrix::new(Matrix::zeros(0, 3), Source::External).unwrap();
        assert!(matches!(estimate_lambda(&empty), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.95, 0.96], 10).unwrap();
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.total(), 2);
        assert_eq!(histogram(&[0.25, 0.55, 0.75], 4).unwrap().counts, vec![0, 1, 1, 1]);
        assert_eq!(histogram(&[1.0, 0.0], 3).unwrap().counts, vec![1, 0, 1]);
        assert!(histogram(&[0.5], 0).is_err());
        // edges printed for bin 29 of 100 must contain 0.29
        assert_eq!(histogram(&[0.29], 100).unwrap().counts[29], 1);
    }

    #[test]
    fn histogram_csv_layout() {
        let h = histogram(&[0.1, 0.9], 2).unwrap();
        assert_eq!(h.to_csv(), "bin_lo,bin_hi,count\n0,0.5,1\n0.5,1,1\n");
    }

    #[test]
    fn lambda_mode_parsing() {
        assert_eq!("auto".parse::<LambdaMode>().unwrap(), LambdaMode::Auto);
        assert_eq!("sweep".parse::<LambdaMode>().unwrap(), LambdaMode::Sweep);
        assert_eq!("0.25".parse::<LambdaMode>().unwrap(), LambdaMode::Fixed(0.25));
        assert!("1.5".parse::<LambdaMode>().is_err());
        assert!("maybe".parse::<LambdaMode>().is_err());
    }
}
