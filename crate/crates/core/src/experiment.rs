//! The low-shot evaluation grid: one cell per (shots, seed), each sampling an
//! episode, training a head, fusing, and scoring on the full test split.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adapters::{
    predict_clip_adapter, predict_linear_probe, predict_svl_adapter, train_clip_adapter, train_linear_probe,
    train_svl_adapter, ClipAdapterOptions, TrainConfig, DEFAULT_HIDDEN_DIM,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_runs, emit_report, results_to_csv, top1_accuracy, AggregateResult, ReportFormat, RunResult,
};
use crate::fusion::{fuse_with, sweep_lambda, SweepResult, TieBreak};
use crate::pseudolabel::{zero_shot_adapt, DEFAULT_K};
use crate::store::{
    sample_episode, split_validation, write_atomic, ClassSpace, DatasetManifest, EmbeddingTable, LabelVector,
    DEFAULT_SHOTS,
};
use crate::zeroshot::{
    estimate_lambda, zero_shot_probs, LambdaEstimate, LambdaMode, ProbabilityMatrix, DEFAULT_TEMPERATURE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    ZeroShot,
    LinearProbe,
    ClipAdapter,
    /// Blending weight from `RunSpec::lambda` (validation sweep by default).
    SvlAdapter,
    /// Blending weight always from zero-shot confidence.
    SvlAdapterAuto,
    /// Adapter trained on zero-shot pseudolabels; no labeled examples.
    ZeroShotSvl,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ZeroShot,
        Method::LinearProbe,
        Method::ClipAdapter,
        Method::SvlAdapter,
        Method::SvlAdapterAuto,
        Method::ZeroShotSvl,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ZeroShot => "zeroshot",
            Method::LinearProbe => "linear-probe",
            Method::ClipAdapter => "clip-adapter",
            Method::SvlAdapter => "svl-adapter",
            Method::SvlAdapterAuto => "svl-adapter-auto",
            Method::ZeroShotSvl => "zero-shot-svl",
        }
    }

    /// Whether the method trains on labeled episodes.
    pub fn uses_shots(&self) -> bool {
        !matches!(self, Method::ZeroShot | Method::ZeroShotSvl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub manifest: PathBuf,
    pub method: Method,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub temperature: f64,
    pub lambda: LambdaMode,
    pub k: usize,
    pub hidden_dim: usize,
    /// Seed is overwritten per cell.
    pub train: TrainConfig,
    pub clip_adapter: ClipAdapterOptions,
    pub out_dir: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(manifest: impl Into<PathBuf>, method: Method) -> Self {
        Self {
            manifest: manifest.into(),
            method,
            shots: DEFAULT_SHOTS.to_vec(),
            seeds: vec![0, 1, 2],
            temperature: DEFAULT_TEMPERATURE,
            lambda: LambdaMode::Sweep,
            k: DEFAULT_K,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            train: TrainConfig::default(),
            clip_adapter: ClipAdapterOptions::default(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.method.uses_shots() && (self.shots.is_empty() || self.shots.contains(&0)) {
            return Err(Error::Config("shots must be a nonempty list of positive counts".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden dimension must be at least 1".into()));
        }
        self.train.validate()
    }

    /// (shots, seed) cells in execution order. Zero-shot runs once; the
    /// pseudolabel method once per seed.
    pub fn cells(&self) -> Vec<(usize, u64)> {
        match self.method {
            Method::ZeroShot => vec![(0, self.seeds[0])],
            Method::ZeroShotSvl => self.seeds.iter().map(|&s| (0, s)).collect(),
            _ => {
                let mut shots = self.shots.clone();
                shots.sort_unstable();
                shots.dedup();
                shots
                    .iter()
                    .flat_map(|&n| self.seeds.iter().map(move |&s| (n, s)))
                    .collect()
            }
        }
    }
}

/// Features and class space for a manifest. Label files are read only on
/// demand: training labels by the labeled methods, test labels for scoring.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub manifest: DatasetManifest,
    pub classes: ClassSpace,
    pub train: EmbeddingTable,
    pub test: EmbeddingTable,
    pub ssl_train: EmbeddingTable,
    pub ssl_test: EmbeddingTable,
}

impl ExperimentData {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::from_file(manifest_path)?;
        let classes = manifest.load_classes()?;
        let train = manifest.load_train_features()?;
        let test = manifest.load_test_features()?;
        let (ssl_train, ssl_test) = match manifest.load_ssl_features()? {
            Some(pair) => pair,
            None => (train.clone(), test.clone()),
        };
        if ssl_train.len() != train.len() || ssl_test.len() != test.len() {
            return Err(Error::InvalidInput(
                "self-supervised tables must have the same rows as the main tables".into(),
            ));
        }
        Ok(Self {
            manifest,
            classes,
            train,
            test,
            ssl_train,
            ssl_test,
        })
    }

    pub fn name(&self) -> &str {
        &self.manifest.dataset
    }

    pub fn train_labels(&self) -> Result<LabelVector> {
        let labels = self.manifest.load_train_labels()?;
        crate::store::check_aligned("train", self.train.len(), labels.len())?;
        Ok(labels)
    }

    pub fn test_labels(&self) -> Result<LabelVector> {
        let labels = self.manifest.load_test_labels()?;
        crate::store::check_aligned("test", self.test.len(), labels.len())?;
        Ok(labels)
    }

    pub fn zero_shot_test(&self, temperature: f64) -> Result<ProbabilityMatrix> {
        zero_shot_probs(&self.test, &self.classes, temperature)
    }
}

/// Test predictions of one cell plus what was learned about lambda.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub shots: usize,
    pub seed: u64,
    pub probs: ProbabilityMatrix,
    pub lambda: Option<LambdaEstimate>,
    pub sweep: Option<SweepResult>,
}

/// Trains and predicts one (shots, seed) cell without touching test labels.
pub fn run_cell(data: &ExperimentData, spec: &RunSpec, shots: usize, seed: u64) -> Result<CellOutcome> {
    let cfg = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let k = data.classes.num_classes();
    let outcome = |probs, lambda, sweep| CellOutcome {
        shots,
        seed,
        probs,
        lambda,
        sweep,
    };
    match spec.method {
        Method::ZeroShot => Ok(outcome(data.zero_shot_test(spec.temperature)?, None, None)),
        Method::ZeroShotSvl => {
            let pv = data.zero_shot_test(spec.temperature)?;
            let adapted = zero_shot_adapt(&data.ssl_test, &pv, spec.k, spec.hidden_dim, &cfg)?;
            let fused = adapted.fusion;
            Ok(outcome(fused.probs, Some(fused.lambda), None))
        }
        Method::LinearProbe | Method::ClipAdapter | Method::SvlAdapter | Method::SvlAdapterAuto => {
            let labels = data.train_labels()?;
            let episode = sample_episode(&labels, shots, seed)?;
            let idx = episode.indices();
            let y = LabelVector::new(episode.labels(), k)?;
            match spec.method {
                Method::LinearProbe => {
                    let (probe, _) = train_linear_probe(&data.train.select(&idx), &y, k, &cfg)?;
                    Ok(outcome(predict_linear_probe(&probe, &data.test)?, None, None))
                }
                Method::ClipAdapter => {
                    let opts = ClipAdapterOptions {
                        temperature: spec.temperature,
                        ..spec.clip_adapter
                    };
                    let (params, _) = train_clip_adapter(&data.train.select(&idx), &y, &data.classes, &opts, &cfg)?;
                    Ok(outcome(
                        predict_clip_adapter(&params, &data.test, &data.classes)?,
                        None,
                        None,
                    ))
                }
                _ => {
                    let (adapter, _) = train_svl_adapter(&data.ssl_train.select(&idx), &y, k, spec.hidden_dim, &cfg)?;
                    let pv = data.zero_shot_test(spec.temperature)?;
                    let ps = predict_svl_adapter(&adapter, &data.ssl_test)?;
                    let mode = if spec.method == Method::SvlAdapterAuto {
                        LambdaMode::Auto
                    } else {
                        spec.lambda
                    };
                    let (lambda, sweep) = match mode {
                        LambdaMode::Auto => (estimate_lambda(&pv)?, None),
                        LambdaMode::Fixed(v) => (LambdaEstimate::fixed(v)?, None),
                        LambdaMode::Sweep => {
                            let val = split_validation(&labels, &episode, seed)?;
                            let vidx = val.indices();
                            let pv_val = zero_shot_probs(&data.train.select(&vidx), &data.classes, spec.temperature)?;
                            let ps_val = predict_svl_adapter(&adapter, &data.ssl_train.select(&vidx))?;
                            let sweep = sweep_lambda(&pv_val, &ps_val, &val.labels(), TieBreak::Smallest)?;
                            (sweep.best, Some(sweep))
                        }
                    };
                    let fused = fuse_with(&pv, &ps, lambda)?;
                    Ok(outcome(fused.probs, Some(lambda), sweep))
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub results: Vec<RunResult>,
    pub aggregates: Vec<AggregateResult>,
    pub results_csv: String,
    pub report_csv: String,
    pub report_markdown: String,
}

/// Runs every cell of `spec`, scores each on the full test split, and writes
/// `results.csv`, `report.csv` and `report.md` to `spec.out_dir` when set.
pub fn run(spec: &RunSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let data = ExperimentData::load(&spec.manifest)?;
    let mut cells = Vec::new();
    for (shots, seed) in spec.cells() {
        log::info!("{} {}: shots={shots} seed={seed}", data.name(), spec.method);
        cells.push(run_cell(&data, spec, shots, seed)?);
    }
    let test_labels = data.test_labels()?;
    let mut results = Vec::with_capacity(cells.len());
    for cell in &cells {
        results.push(RunResult {
            dataset: data.name().to_string(),
            method: spec.method.to_string(),
            shots: cell.shots,
            seed: cell.seed,
            top1: top1_accuracy(&cell.probs, &test_labels)?,
            lambda_used: cell.lambda.map(|l| l.value),
        });
    }
    let aggregates = aggregate_runs(&results);
    let outcome = RunOutcome {
        results_csv: results_to_csv(&results),
        report_csv: emit_report(&aggregates, ReportFormat::Csv),
        report_markdown: emit_report(&aggregates, ReportFormat::Markdown),
        results,
        aggregates,
    };
    if let Some(dir) = &spec.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("results.csv"), outcome.results_csv.as_bytes())?;
        write_atomic(&dir.join("report.csv"), outcome.report_csv.as_bytes())?;
        write_atomic(&dir.join("report.md"), outcome.report_markdown.as_bytes())?;
    }
    Ok(outcome)
}
