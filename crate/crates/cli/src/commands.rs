use std::path::{Path, PathBuf};

use svl_core::eval::{aggregate_runs, emit_report, results_from_csv, top1_accuracy, ReportFormat, RunResult};
use svl_core::experiment::{run, run_cell, ExperimentData, Method};
use svl_core::pseudolabel::select_pseudolabels;
use svl_core::store::format::LABEL_MAGIC;
use svl_core::store::{decode_labels, decode_matrix, load_dataset, write_atomic};
use svl_core::synthetic::{write_synthetic_dataset, SyntheticDatasetSpec};
use svl_core::zeroshot::{confidence_histogram, estimate_lambda, LambdaMode};
use svl_core::{Error, Result};

use crate::options::Settings;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `text` to `dir/name` when an output directory is set, otherwise
/// to stdout.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
            let path = dir.join(name);
            write_atomic(&path, text.as_bytes())?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn extract_check(files: &[PathBuf], manifest: Option<&Path>) -> Result<()> {
    if files.is_empty() && manifest.is_none() {
        return Err(Error::Config("give embedding/label files or --manifest".into()));
    }
    for path in files {
        let bytes = read(path)?;
        let wrap = |source| Error::Format {
            path: path.clone(),
            source,
        };
        let is_labels = bytes.starts_with(&LABEL_MAGIC) || path.extension().is_some_and(|e| e == "lab");
        if is_labels {
            let labels = decode_labels(&bytes).map_err(wrap)?;
            let max = labels.iter().max().map_or("-".to_string(), |m| m.to_string());
            println!("ok {}: labels n={} max={max}", path.display(), labels.len());
        } else {
            let (m, meta) = decode_matrix(&bytes).map_err(wrap)?;
            let encoder = meta.encoder_id.as_deref().unwrap_or("-");
            println!(
                "ok {}: embeddings {}x{} encoder={encoder}",
                path.display(),
                m.rows(),
                m.cols()
            );
        }
    }
    if let Some(manifest) = manifest {
        let ds = load_dataset(manifest)?;
        println!(
            "ok {}: dataset {} train={} test={} dim={} classes={}",
            manifest.display(),
            ds.name,
            ds.train.features.len(),
            ds.test.features.len(),
            ds.train.features.dim(),
            ds.classes.num_classes()
        );
    }
    Ok(())
}

pub fn zeroshot(settings: &Settings, bins: usize) -> Result<()> {
    let data = ExperimentData::load(&settings.manifest()?)?;
    let probs = data.zero_shot_test(settings.temperature)?;
    let top1 = top1_accuracy(&probs, &data.test_labels()?)?;
    let lambda = estimate_lambda(&probs)?;
    println!(
        "dataset={} temperature={} top1={top1:.6} lambda_auto={:.6}",
        data.name(),
        settings.temperature,
        lambda.value
    );
    if let Some(dir) = &settings.out {
        emit(
            Some(dir),
            "confidence_hist.csv",
            &confidence_histogram(&probs, bins)?.to_csv(),
        )?;
    }
    Ok(())
}

pub fn adapt(settings: &Settings) -> Result<()> {
    let mut spec = settings.run_spec()?;
    if (spec.method.uses_shots() && spec.shots.len() != 1) || spec.seeds.len() != 1 {
        return Err(Error::Config(
            "adapt takes a single --shots value and a single --seeds value".into(),
        ));
    }
    spec.out_dir = None;
    let outcome = run(&spec)?;
    let r = &outcome.results[0];
    let lambda = r.lambda_used.map_or("-".to_string(), |l| format!("{l:.6}"));
    println!(
        "dataset={} method={} shots={} seed={} top1={:.6} lambda={lambda}",
        r.dataset, r.method, r.shots, r.seed, r.top1
    );
    if let Some(dir) = &settings.out {
        emit(Some(dir), "results.csv", &outcome.results_csv)?;
    }
    Ok(())
}

pub fn lambda_estimate(settings: &Settings, bins: usize) -> Result<()> {
    let data = ExperimentData::load(&settings.manifest()?)?;
    let probs = data.zero_shot_test(settings.temperature)?;
    let lambda = estimate_lambda(&probs)?;
    println!(
        "lambda={:.6} items={} classes={}",
        lambda.value,
        lambda.num_items,
        probs.num_classes()
    );
    if let Some(dir) = &settings.out {
        emit(
            Some(dir),
            "confidence_hist.csv",
            &confidence_histogram(&probs, bins)?.to_csv(),
        )?;
    }
    Ok(())
}

pub fn lambda_sweep(settings: &Settings) -> Result<()> {
    let mut spec = settings.run_spec()?;
    spec.method = Method::SvlAdapter;
    spec.lambda = LambdaMode::Sweep;
    if spec.shots.len() != 1 || spec.seeds.len() != 1 {
        return Err(Error::Config(
            "lambda sweep takes a single --shots value and a single --seeds value".into(),
        ));
    }
    let data = ExperimentData::load(&spec.manifest)?;
    let cell = run_cell(&data, &spec, spec.shots[0], spec.seeds[0])?;
    let sweep = cell.sweep.expect("sweep mode records the table");
    eprintln!(
        "best lambda={:.6} over {} validation items",
        sweep.best.value, sweep.best.num_items
    );
    emit(settings.out.as_deref(), "lambda_sweep.csv", &sweep.to_csv())
}

pub fn pseudo(settings: &Settings) -> Result<()> {
    let data = ExperimentData::load(&settings.manifest()?)?;
    let probs = data.zero_shot_test(settings.temperature)?;
    let set = select_pseudolabels(&probs, settings.k)?;
    if !set.empty_classes.is_empty() {
        let names: Vec<&str> = set
            .empty_classes
            .iter()
            .map(|&c| data.classes.names()[c].as_str())
            .collect();
        eprintln!("classes with no pseudolabels: {}", names.join(", "));
    }
    eprintln!("selected {} items (k={})", set.len(), set.k);
    emit(
        settings.out.as_deref(),
        "pseudolabels.csv",
        &set.to_csv(Some(data.test.ids())),
    )
}

pub fn run_grid(settings: &Settings) -> Result<()> {
    let spec = settings.run_spec()?;
    let outcome = run(&spec)?;
    if let Some(dir) = &spec.out_dir {
        eprintln!("wrote results.csv, report.csv, report.md to {}", dir.display());
    }
    print!("{}", outcome.report_markdown);
    Ok(())
}

pub fn report(inputs: &[PathBuf], format: ReportFormat, out: Option<&Path>) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one results.csv".into()));
    }
    let mut runs: Vec<RunResult> = Vec::new();
    for path in inputs {
        let text = String::from_utf8(read(path)?)
            .map_err(|_| Error::InvalidInput(format!("{} is not UTF-8", path.display())))?;
        runs.extend(results_from_csv(&text)?);
    }
    let doc = emit_report(&aggregate_runs(&runs), format);
    match out {
        Some(path) => write_atomic(path, doc.as_bytes()),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

pub fn synth(out: &Path, spec: &SyntheticDatasetSpec) -> Result<()> {
    let manifest = write_synthetic_dataset(out, spec)?;
    println!("wrote {}", manifest.display());
    Ok(())
}
