use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::format::{read_class_names, read_labels, read_matrix, MatrixMetadata};
use crate::error::{Error, Result};
use crate::numerics::{check_labels, Matrix};

/// Row-norm tolerance for tables flagged as normalized.
pub const NORMALIZED_TOL: f32 = 1e-4;

/// N feature vectors from one encoder, with item identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    features: Matrix<f32>,
    encoder_id: String,
    normalized: bool,
}

impl EmbeddingTable {
    pub fn new(
        ids: Vec<String>,
        features: Matrix<f32>,
        encoder_id: impl Into<String>,
        normalized: bool,
    ) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::shape(
                "EmbeddingTable::new",
                format!("{} ids", features.rows()),
                ids.len(),
            ));
        }
        features.ensure_finite("embedding table")?;
        if normalized {
            if let Some((row, norm)) = features
                .row_norms()
                .into_iter()
                .enumerate()
                .find(|(_, n)| (n - 1.0).abs() > NORMALIZED_TOL)
            {
                return Err(Error::InvalidInput(format!(
                    "table flagged normalized but row {row} has norm {norm}"
                )));
            }
        }
        Ok(Self {
            ids,
            features,
            encoder_id: encoder_id.into(),
            normalized,
        })
    }

    /// Table whose item ids are the row indices.
    pub fn from_features(features: Matrix<f32>, encoder_id: impl Into<String>) -> Result<Self> {
        let ids = (0..features.rows()).map(|i| i.to_string()).collect();
        Self::new(ids, features, encoder_id, false)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix<f32> {
        &self.features
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select_rows(indices),
            encoder_id: self.encoder_id.clone(),
            normalized: self.normalized,
        }
    }

    /// Unit-norm copy. Zero rows are reported by index.
    pub fn normalized(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        let features = self
            .features
            .l2_normalize_rows()
            .map_err(|row| Error::DegenerateEmbedding {
                what: "embedding table",
                row,
            })?;
        Ok(Self {
            features,
            normalized: true,
            ..self.clone()
        })
    }
}

/// Class names and, for zero-shot use, one text embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpace {
    names: Vec<String>,
    text_embeddings: Option<Matrix<f32>>,
    prompt_template: String,
}

impl ClassSpace {
    pub fn new(names: Vec<String>, text_embeddings: Option<Matrix<f32>>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyInput("class names"));
        }
        let mut seen = HashSet::new();
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::InvalidInput(format!("class name at line {i} is empty")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate class name {n:?}")));
            }
        }
        if let Some(t) = &text_embeddings {
            if t.rows() != names.len() {
                return Err(Error::DimensionMismatch {
                    what: "class text embedding rows".into(),
                    expected: names.len(),
                    found: t.rows(),
                });
            }
            t.ensure_finite("class text embeddings")?;
        }
        Ok(Self {
            names,
            text_embeddings,
            prompt_template: String::new(),
        })
    }

    pub fn with_prompt_template(mut self, template: impl Into<String>) -> Self {
        self.prompt_template = template.into();
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn text_embeddings(&self) -> Option<&Matrix<f32>> {
        self.text_embeddings.as_ref()
    }

    pub fn prompt_template(&self) -> &str {
        &self.prompt_template
    }
}

/// Class indices, all below `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        check_labels(&labels, num_classes)?;
        Ok(Self { labels, num_classes })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Item indices of each class, ascending.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Parsed `key=value` dataset manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset: String,
    pub dim: usize,
    pub num_classes: usize,
    pub train_embeddings: PathBuf,
    pub train_labels: PathBuf,
    pub test_embeddings: PathBuf,
    pub test_labels: PathBuf,
    pub class_names: PathBuf,
    pub class_text_embeddings: Option<PathBuf>,
    pub encoder: Option<String>,
    pub normalized: Option<bool>,
    /// Features from a second (self-supervised) encoder for the same items.
    pub ssl_train_embeddings: Option<PathBuf>,
    pub ssl_test_embeddings: Option<PathBuf>,
    pub ssl_encoder: Option<String>,
}

const REQUIRED_KEYS: [&str; 8] = [
    "dataset",
    "dim",
    "num_classes",
    "train_embeddings",
    "train_labels",
    "test_embeddings",
    "test_labels",
    "class_names",
];

const OPTIONAL_KEYS: [&str; 6] = [
    "class_text_embeddings",
    "encoder",
    "normalized",
    "ssl_train_embeddings",
    "ssl_test_embeddings",
    "ssl_encoder",
];

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Manifest(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Manifest(format!("line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(map)
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map = parse_key_values(text)?;
        for key in map.keys() {
            if !REQUIRED_KEYS.contains(&key.as_str()) && !OPTIONAL_KEYS.contains(&key.as_str()) {
                log::warn!("manifest: ignoring unknown key {key:?}");
            }
        }
        let mut take = |key: &str| map.remove(key);
        let mut require = |key: &'static str| -> Result<String> {
            take(key).ok_or_else(|| Error::Manifest(format!("missing required key {key:?}")))
        };
        let parse_count = |key: &str, v: String| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Manifest(format!("{key}: expected a non-negative integer, got {v:?}")))
        };
        let path = |v: String| base_dir.join(v);

        let dataset = require("dataset")?;
        let dim = parse_count("dim", require("dim")?)?;
        let num_classes = parse_count("num_classes", require("num_classes")?)?;
        let train_embeddings = path(require("train_embeddings")?);
        let train_labels = path(require("train_labels")?);
        let test_embeddings = path(require("test_embeddings")?);
        let test_labels = path(require("test_labels")?);
        let class_names = path(require("class_names")?);
        let class_text_embeddings = take("class_text_embeddings").map(path);
        let encoder = take("encoder");
        let normalized = take("normalized")
            .map(|v| {
                v.parse::<bool>()
                    .map_err(|_| Error::Manifest(format!("normalized: expected true/false, got {v:?}")))
            })
            .transpose()?;
        let ssl_train_embeddings = take("ssl_train_embeddings").map(path);
        let ssl_test_embeddings = take("ssl_test_embeddings").map(path);
        let ssl_encoder = take("ssl_encoder");

        if ssl_train_embeddings.is_some() != ssl_test_embeddings.is_some() {
            return Err(Error::Manifest(
                "ssl_train_embeddings and ssl_test_embeddings must be given together".into(),
            ));
        }
        if num_classes == 0 {
            return Err(Error::Manifest("num_classes must be at least 1".into()));
        }

        Ok(Self {
            dataset,
            dim,
            num_classes,
            train_embeddings,
            train_labels,
            test_embeddings,
            test_labels,
            class_names,
            class_text_embeddings,
            encoder,
            normalized,
            ssl_train_embeddings,
            ssl_test_embeddings,
            ssl_encoder,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Serializes with paths written as given (callers pass relative paths for
    /// relocatable manifests).
    pub fn to_text(&self, base_dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base_dir).unwrap_or(p).display().to_string();
        let mut out = format!(
            "dataset={}\ndim={}\nnum_classes={}\ntrain_embeddings={}\ntrain_labels={}\ntest_embeddings={}\ntest_labels={}\nclass_names={}\n",
            self.dataset,
            self.dim,
            self.num_classes,
            rel(&self.train_embeddings),
            rel(&self.train_labels),
            rel(&self.test_embeddings),
            rel(&self.test_labels),
            rel(&self.class_names),
        );
        if let Some(p) = &self.class_text_embeddings {
            out.push_str(&format!("class_text_embeddings={}\n", rel(p)));
        }
        if let Some(e) = &self.encoder {
            out.push_str(&format!("encoder={e}\n"));
        }
        if let Some(n) = self.normalized {
            out.push_str(&format!("normalized={n}\n"));
        }
        if let (Some(tr), Some(te)) = (&self.ssl_train_embeddings, &self.ssl_test_embeddings) {
            out.push_str(&format!(
                "ssl_train_embeddings={}\nssl_test_embeddings={}\n",
                rel(tr),
                rel(te)
            ));
        }
        if let Some(e) = &self.ssl_encoder {
            out.push_str(&format!("ssl_encoder={e}\n"));
        }
        out
    }

    fn load_table(
        &self,
        path: &Path,
        expected_dim: Option<usize>,
        default_encoder: Option<&str>,
        declared_normalized: bool,
    ) -> Result<EmbeddingTable> {
        let (features, meta) = read_matrix(path)?;
        if let Some(dim) = expected_dim {
            if features.cols() != dim {
                return Err(Error::DimensionMismatch {
                    what: path.display().to_string(),
                    expected: dim,
                    found: features.cols(),
                });
            }
        }
        let MatrixMetadata {
            encoder_id, normalized, ..
        } = meta;
        let encoder = encoder_id
            .or_else(|| default_encoder.map(str::to_string))
            .unwrap_or_default();
        let normalized = normalized || declared_normalized;
        let ids = (0..features.rows()).map(|i| i.to_string()).collect();
        EmbeddingTable::new(ids, features, encoder, normalized)
    }

    pub fn load_train_features(&self) -> Result<EmbeddingTable> {
        self.load_table(
            &self.train_embeddings,
            Some(self.dim),
            self.encoder.as_deref(),
            self.normalized == Some(true),
        )
    }

    pub fn load_test_features(&self) -> Result<EmbeddingTable> {
        self.load_table(
            &self.test_embeddings,
            Some(self.dim),
            self.encoder.as_deref(),
            self.normalized == Some(true),
        )
    }

    pub fn has_ssl_features(&self) -> bool {
        self.ssl_train_embeddings.is_some()
    }

    /// Self-supervised features; `None` when the manifest declares none.
    pub fn load_ssl_features(&self) -> Result<Option<(EmbeddingTable, EmbeddingTable)>> {
        let (Some(tr), Some(te)) = (&self.ssl_train_embeddings, &self.ssl_test_embeddings) else {
            return Ok(None);
        };
        let enc = self.ssl_encoder.as_deref();
        let train = self.load_table(tr, None, enc, false)?;
        let test = self.load_table(te, Some(train.dim()), enc, false)?;
        Ok(Some((train, test)))
    }

    fn load_label_file(&self, path: &Path) -> Result<LabelVector> {
        LabelVector::new(read_labels(path)?, self.num_classes)
    }

    pub fn load_train_labels(&self) -> Result<LabelVector> {
        self.load_label_file(&self.train_labels)
    }

    pub fn load_test_labels(&self) -> Result<LabelVector> {
        self.load_label_file(&self.test_labels)
    }

    pub fn load_classes(&self) -> Result<ClassSpace> {
        let names = read_class_names(&self.class_names)?;
        if names.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                what: "class names".into(),
                expected: self.num_classes,
                found: names.len(),
            });
        }
        let text = match &self.class_text_embeddings {
            Some(p) => {
                let (m, _) = read_matrix(p)?;
                if m.cols() != self.dim {
                    return Err(Error::DimensionMismatch {
                        what: "class text embedding dim".into(),
                        expected: self.dim,
                        found: m.cols(),
                    });
                }
                Some(m)
            }
            None => None,
        };
        ClassSpace::new(names, text)
    }
}

/// Features and labels for one split.
#[derive(Debug, Clone)]
pub struct Split {
    pub features: EmbeddingTable,
    pub labels: LabelVector,
    pub ssl_features: Option<EmbeddingTable>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: Split,
    pub test: Split,
    pub classes: ClassSpace,
}

pub(crate) fn check_aligned(what: &str, rows: usize, labels: usize) -> Result<()> {
    if rows != labels {
        return Err(Error::DimensionMismatch {
            what: format!("{what} label count"),
            expected: rows,
            found: labels,
        });
    }
    Ok(())
}

/// Loads and cross-validates every file a manifest references.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = DatasetManifest::from_file(manifest_path)?;
    let classes = manifest.load_classes()?;
    let train_features = manifest.load_train_features()?;
    let test_features = manifest.load_test_features()?;
    let train_labels = manifest.load_train_labels()?;
    let test_labels = manifest.load_test_labels()?;
    check_aligned("train", train_features.len(), train_labels.len())?;
    check_aligned("test", test_features.len(), test_labels.len())?;
    let (ssl_train, ssl_test) = match manifest.load_ssl_features()? {
        Some((tr, te)) => {
            check_aligned("ssl train", tr.len(), train_labels.len())?;
            check_aligned("ssl test", te.len(), test_labels.len())?;
            (Some(tr), Some(te))
        }
        None => (None, None),
    };
    Ok(Dataset {
        name: manifest.dataset,
        train: Split {
            features: train_features,
            labels: train_labels,
            ssl_features: ssl_train,
        },
        test: Split {
            features: test_features,
            labels: test_labels,
            ssl_features: ssl_test,
        },
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_space_rejects_duplicates_and_bad_rows() {
        assert!(ClassSpace::new(vec!["a".into(), "a".into()], None).is_err());
        assert!(ClassSpace::new(vec![], None).is_err());
        let err = ClassSpace::new(vec!["a".into(), "b".into()], Some(Matrix::zeros(3, 4))).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn normalized_flag_is_checked() {
        let m = Matrix::from_rows(&[[3.0f32, 4.0]]).unwrap();
        assert!(EmbeddingTable::new(vec!["x".into()], m.clone(), "e", true).is_err());
        let t = EmbeddingTable::from_features(m, "e").unwrap().normalized().unwrap();
        assert!(t.is_normalized());
        assert_eq!(t.features().row(0), &[0.6, 0.8]);
    }

    #[test]
    fn manifest_requires_keys() {
        let err = DatasetManifest::parse("dataset=x\ndim=4\n", Path::new("/")).unwrap_err();
        assert!(matches!(err, Error::Manifest(m) if m.contains("num_classes")));
        assert!(DatasetManifest::parse("dataset x", Path::new("/")).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let base = Path::new("/data/toy");
        let text = "dataset=toy\ndim=8\nnum_classes=3\ntrain_embeddings=tr.emb\ntrain_labels=tr.lab\n\
                    test_embeddings=te.emb\ntest_labels=te.lab\nclass_names=classes.txt\n\
                    class_text_embeddings=text.emb\nencoder=clip\nnormalized=true\n";
        let m = DatasetManifest::parse(text, base).unwrap();
        assert_eq!(m.train_embeddings, base.join("tr.emb"));
        assert_eq!(m.normalized, Some(true));
        assert_eq!(DatasetManifest::parse(&m.to_text(base), base).unwrap(), m);
    }

    #[test]
    fn label_vector_groups_by_class() {
        let l = LabelVector::new(vec![1, 0, 1, 2], 3).unwrap();
        assert_eq!(l.by_class(), vec![vec![1], vec![0, 2], vec![3]]);
        assert!(matches!(
            LabelVector::new(vec![0, 3], 3),
            Err(Error::InvalidLabel { row: 1, label: 3, .. })
        ));
    }
}
