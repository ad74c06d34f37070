//! Experiment flags, optionally backed by a `key=value` config file. A flag
//! given on the command line always wins over the file.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use svl_core::adapters::{ClipAdapterOptions, TrainConfig, DEFAULT_HIDDEN_DIM};
use svl_core::experiment::{Method, RunSpec};
use svl_core::pseudolabel::DEFAULT_K;
use svl_core::store::{parse_key_values, DEFAULT_SHOTS};
use svl_core::zeroshot::{LambdaMode, DEFAULT_TEMPERATURE};
use svl_core::{Error, Result};

const CONFIG_KEYS: [&str; 13] = [
    "manifest",
    "method",
    "shots",
    "seeds",
    "temperature",
    "lambda",
    "k",
    "epochs",
    "batch",
    "lr",
    "hidden",
    "alpha",
    "out",
];

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Dataset manifest (key=value file).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// zeroshot | linear-probe | clip-adapter | svl-adapter | svl-adapter-auto | zero-shot-svl
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated shot counts [default: 1,2,4,8,16]
    #[arg(long, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    /// Comma-separated seeds [default: 0,1,2]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Softmax temperature on cosine similarities [default: 100]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// auto | sweep | a fixed value in [0, 1] [default: sweep]
    #[arg(long)]
    pub lambda: Option<String>,
    /// Pseudolabels kept per predicted class [default: 16]
    #[arg(long)]
    pub k: Option<usize>,
    /// [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adapter hidden width [default: 256]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// CLIP-Adapter residual ratio [default: 0.2]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key=value file supplying any of the flags above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub manifest: Option<PathBuf>,
    pub method: Method,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub temperature: f64,
    pub lambda: LambdaMode,
    pub k: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub alpha: f64,
    pub out: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("config {key}: cannot parse {raw:?}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|v| parse(key, v)).collect()
}

impl ExperimentArgs {
    fn config_map(&self) -> Result<BTreeMap<String, String>> {
        let Some(path) = &self.config else {
            return Ok(BTreeMap::new());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let map = parse_key_values(&text)?;
        if let Some(bad) = map.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("config file: unknown key {bad:?}")));
        }
        Ok(map)
    }

    /// Flags, then config file, then the protocol defaults.
    pub fn resolve(&self, default_method: Method) -> Result<Settings> {
        self.resolve_with(default_method, &DEFAULT_SHOTS, &[0, 1, 2])
    }

    /// As [`ExperimentArgs::resolve`] with other fallback shot and seed lists.
    pub fn resolve_with(&self, default_method: Method, shots: &[usize], seeds: &[u64]) -> Result<Settings> {
        let cfg = self.config_map()?;
        let get = |key: &str| cfg.get(key).map(String::as_str);
        let defaults = TrainConfig::default();

        macro_rules! pick {
            ($flag:expr, $key:literal, $default:expr) => {
                match ($flag.clone(), get($key)) {
                    (Some(v), _) => v,
                    (None, Some(raw)) => parse($key, raw)?,
                    (None, None) => $default,
                }
            };
        }

        let method = match (&self.method, get("method")) {
            (Some(m), _) => m.parse()?,
            (None, Some(m)) => m.parse()?,
            (None, None) => default_method,
        };
        let lambda = match (&self.lambda, get("lambda")) {
            (Some(l), _) => l.parse()?,
            (None, Some(l)) => l.parse()?,
            (None, None) => LambdaMode::Sweep,
        };
        let shot_list = match (&self.shots, get("shots")) {
            (Some(v), _) => v.clone(),
            (None, Some(raw)) => parse_list("shots", raw)?,
            (None, None) => shots.to_vec(),
        };
        let seeds = match (&self.seeds, get("seeds")) {
            (Some(v), _) => v.clone(),
            (None, Some(raw)) => parse_list("seeds", raw)?,
            (None, None) => seeds.to_vec(),
        };
        Ok(Settings {
            manifest: self.manifest.clone().or_else(|| get("manifest").map(PathBuf::from)),
            method,
            shots: shot_list,
            seeds,
            temperature: pick!(self.temperature, "temperature", DEFAULT_TEMPERATURE),
            lambda,
            k: pick!(self.k, "k", DEFAULT_K),
            epochs: pick!(self.epochs, "epochs", defaults.epochs),
            batch: pick!(self.batch, "batch", defaults.batch_size),
            lr: pick!(self.lr, "lr", defaults.lr),
            hidden: pick!(self.hidden, "hidden", DEFAULT_HIDDEN_DIM),
            alpha: pick!(self.alpha, "alpha", ClipAdapterOptions::default().alpha),
            out: self.out.clone().or_else(|| get("out").map(PathBuf::from)),
        })
    }
}

impl Settings {
    pub fn manifest(&self) -> Result<PathBuf> {
        self.manifest
            .clone()
            .ok_or_else(|| Error::Config("--manifest is required".into()))
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        let mut spec = RunSpec::new(self.manifest()?, self.method);
        spec.shots = self.shots.clone();
        spec.seeds = self.seeds.clone();
        spec.temperature = self.temperature;
        spec.lambda = self.lambda;
        spec.k = self.k;
        spec.hidden_dim = self.hidden;
        spec.train = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            ..TrainConfig::default()
        };
        spec.clip_adapter.alpha = self.alpha;
        spec.out_dir = self.out.clone();
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_flags_or_file() {
        let s = ExperimentArgs::default().resolve(Method::SvlAdapter).unwrap();
        assert_eq!(s.shots, vec![1, 2, 4, 8, 16]);
        assert_eq!(s.seeds, vec![0, 1, 2]);
        assert_eq!((s.k, s.epochs, s.batch, s.hidden), (16, 50, 32, 256));
        assert_eq!(s.lr, 0.001);
        assert_eq!(s.temperature, 100.0);
        assert_eq!(s.lambda, LambdaMode::Sweep);
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "epochs = 7\nshots = 1,16\nlambda = auto\nk = 4\n").unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            k: Some(9),
            ..Default::default()
        };
        let s = args.resolve(Method::SvlAdapter).unwrap();
        assert_eq!(s.epochs, 7);
        assert_eq!(s.shots, vec![1, 16]);
        assert_eq!(s.lambda, LambdaMode::Auto);
        assert_eq!(s.k, 9);
    }

    #[test]
    fn bad_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "epoch = 7\n").unwrap();
        let args = ExperimentArgs {
            config: Some(path.clone()),
            ..Default::default()
        };
        assert!(matches!(args.resolve(Method::SvlAdapter), Err(Error::Config(_))));
        std::fs::write(&path, "lr = fast\n").unwrap();
        assert!(matches!(args.resolve(Method::SvlAdapter), Err(Error::Config(_))));
    }
}
