//! Gaussian-cluster fixtures with known separability.
//!
//! Class `k` is centred at `(separation / sqrt 2) * e_k`, so every pair of
//! class means is exactly `separation` standard deviations apart; noise is
//! isotropic with unit variance.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{stream, stream_rng};
use crate::store::{
    write_atomic, write_class_names, write_labels, write_matrix, DatasetManifest, EmbeddingTable, MatrixMetadata,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianClusters {
    pub num_classes: usize,
    pub dim: usize,
    /// Distance between any two class means, in units of the noise std.
    pub separation: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: EmbeddingTable,
    pub train_labels: Vec<usize>,
    pub test: EmbeddingTable,
    pub test_labels: Vec<usize>,
    /// K×D class means.
    pub means: Matrix<f32>,
}

impl GaussianClusters {
    pub fn new(num_classes: usize, dim: usize, separation: f64) -> Self {
        assert!(num_classes <= dim, "need dim >= num_classes for orthogonal means");
        Self {
            num_classes,
            dim,
            separation,
        }
    }

    pub fn means(&self) -> Matrix<f32> {
        let scale = (self.separation / 2f64.sqrt()) as f32;
        Matrix::from_fn(self.num_classes, self.dim, |r, c| if r == c { scale } else { 0.0 })
    }

    fn sample(&self, per_class: usize, seed: u64, split: u64) -> (Matrix<f32>, Vec<usize>) {
        let means = self.means();
        let mut rng = stream_rng(seed, stream::SYNTHETIC, split);
        let n = per_class * self.num_classes;
        let mut labels = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * self.dim);
        for k in 0..self.num_classes {
            for _ in 0..per_class {
                labels.push(k);
                for &m in means.row(k) {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + z as f32);
                }
            }
        }
        (Matrix::new(n, self.dim, data).expect("sized above"), labels)
    }

    /// `train_per_class` and `test_per_class` items per class, class-major order.
    pub fn generate(&self, train_per_class: usize, test_per_class: usize, seed: u64) -> SyntheticData {
        let (train, train_labels) = self.sample(train_per_class, seed, 0);
        let (test, test_labels) = self.sample(test_per_class, seed, 1);
        let tag = format!("gaussian-k{}-d{}-sep{}", self.num_classes, self.dim, self.separation);
        SyntheticData {
            train: EmbeddingTable::from_features(train, tag.clone()).expect("finite"),
            train_labels,
            test: EmbeddingTable::from_features(test, tag).expect("finite"),
            test_labels,
            means: self.means(),
        }
    }
}

/// Options for [`write_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub name: String,
    pub num_classes: usize,
    /// Dimension of the vision-language view and its class text embeddings.
    pub clip_dim: usize,
    pub clip_separation: f64,
    /// Dimension of the self-supervised view.
    pub ssl_dim: usize,
    pub ssl_separation: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            num_classes: 5,
            clip_dim: 16,
            clip_separation: 3.0,
            ssl_dim: 32,
            ssl_separation: 6.0,
            train_per_class: 40,
            test_per_class: 100,
            seed: 0,
        }
    }
}

/// Writes a two-view synthetic dataset (files plus `manifest.txt`) into
/// `dir` and returns the manifest path. Class text embeddings are the class
/// means of the vision-language view.
pub fn write_synthetic_dataset(dir: &Path, spec: &SyntheticDatasetSpec) -> Result<PathBuf> {
    if spec.num_classes == 0 || spec.num_classes > spec.clip_dim.min(spec.ssl_dim) {
        return Err(Error::Config(
            "synthetic data needs 1 <= num_classes <= both dims".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let clip = GaussianClusters::new(spec.num_classes, spec.clip_dim, spec.clip_separation);
    let ssl = GaussianClusters::new(spec.num_classes, spec.ssl_dim, spec.ssl_separation);
    let clip_data = clip.generate(spec.train_per_class, spec.test_per_class, spec.seed);
    let ssl_data = ssl.generate(spec.train_per_class, spec.test_per_class, spec.seed.wrapping_add(1));

    let clip_meta = MatrixMetadata {
        encoder_id: Some("synthetic-clip".into()),
        normalized: false,
        dataset: Some(spec.name.clone()),
    };
    let ssl_meta = MatrixMetadata {
        encoder_id: Some("synthetic-ssl".into()),
        ..clip_meta.clone()
    };
    write_matrix(dir.join("train_clip.emb"), clip_data.train.features(), &clip_meta)?;
    write_matrix(dir.join("test_clip.emb"), clip_data.test.features(), &clip_meta)?;
    write_matrix(dir.join("train_ssl.emb"), ssl_data.train.features(), &ssl_meta)?;
    write_matrix(dir.join("test_ssl.emb"), ssl_data.test.features(), &ssl_meta)?;
    write_matrix(dir.join("class_text.emb"), &clip_data.means, &clip_meta)?;
    write_labels(dir.join("train.lab"), &clip_data.train_labels)?;
    write_labels(dir.join("test.lab"), &clip_data.test_labels)?;
    let names: Vec<String> = (0..spec.num_classes).map(|k| format!("class_{k}")).collect();
    write_class_names(dir.join("classes.txt"), &names)?;

    let manifest = DatasetManifest {
        dataset: spec.name.clone(),
        dim: spec.clip_dim,
        num_classes: spec.num_classes,
        train_embeddings: "train_clip.emb".into(),
        train_labels: "train.lab".into(),
        test_embeddings: "test_clip.emb".into(),
        test_labels: "test.lab".into(),
        class_names: "classes.txt".into(),
        class_text_embeddings: Some("class_text.emb".into()),
        encoder: Some("synthetic-clip".into()),
        normalized: Some(false),
        ssl_train_embeddings: Some("train_ssl.emb".into()),
        ssl_test_embeddings: Some("test_ssl.emb".into()),
        ssl_encoder: Some("synthetic-ssl".into()),
    };
    let path = dir.join("manifest.txt");
    write_atomic(&path, manifest.to_text(Path::new("")).as_bytes())?;
    Ok(path)
}
