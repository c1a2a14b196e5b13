//! Stage orchestration shared by the CLI: generate, compromise, detect,
//! evaluate, and the one-shot `run_all`.
//!
//! A run directory holds one subdirectory per dataset label:
//!
//! ```text
//! <out>/config.json            resolved experiment config
//! <out>/run_metadata.json      versions, seeds, timing
//! <out>/report.csv|json        Table-2-shaped confusion report
//! <out>/strategy_recall.csv    per-strategy recall
//! <out>/<label>/dataset/       pristine corpus + manifest.json
//! <out>/<label>/blind/         corpus handed to detectors (victims mutated)
//! <out>/<label>/truth.json     ground truth, kept out of blind/
//! <out>/<label>/mutation_logs/ one JSON log per victim
//! <out>/<label>/features.csv   feature matrix
//! <out>/<label>/flags/         one FlagSet JSON per detector
//! <out>/<label>/scatter/       PCA scatter CSV per PCA detector
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::detect::{self, DetectError, Detector, DetectorParams, FlagSet};
use crate::eval::{self, DatasetResult, DetectionReport, EvalError};
use crate::features::{self, FeatureError, FeatureMatrix};
use crate::gcode;
use crate::mutate::{self, CompromisePlan, MutateError, MutationLog, Strategy, StrategyId};
use crate::seed::derive_seed;
use crate::synth::{self, DatasetId, DatasetManifest, SynthError, MANIFEST_FILE};

pub const TRUTH_FILE: &str = "truth.json";
pub const METADATA_FILE: &str = "run_metadata.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Mutate(#[from] MutateError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: gcode::GcodeError,
    },
    #[error("invalid config: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| ExperimentError::Json {
        path: path.display().to_string(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| ExperimentError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// One corpus of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub dataset: DatasetId,
    /// Run-directory label; defaults to the dataset id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub files: usize,
    pub angular_step: f64,
    /// Victims per strategy.
    #[serde(default)]
    pub compromise: BTreeMap<StrategyId, usize>,
}

impl DatasetConfig {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.dataset.to_string())
    }

    /// Reference-sized corpus: D1 with two ID1 victims, D2 with ten per strategy.
    pub fn full(dataset: DatasetId) -> Self {
        let (files, angular_step) = dataset.default_sweep();
        let compromise = match dataset {
            DatasetId::D1 => BTreeMap::from([(StrategyId::Id1, 2)]),
            DatasetId::D2 => StrategyId::ALL.iter().map(|&s| (s, 10)).collect(),
        };
        DatasetConfig {
            dataset,
            label: None,
            files,
            angular_step,
            compromise,
        }
    }

    /// Desk-scale D2: 720 files at 0.5 degrees, five victims per strategy.
    pub fn desk_d2() -> Self {
        DatasetConfig {
            files: 720,
            angular_step: 0.5,
            compromise: StrategyId::ALL.iter().map(|&s| (s, 5)).collect(),
            ..DatasetConfig::full(DatasetId::D2)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<Detector>,
    #[serde(default)]
    pub detector_params: DetectorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_detectors() -> Vec<Detector> {
    Detector::DEFAULT.to_vec()
}

impl Default for ExperimentConfig {
    /// Both reference-sized corpora.
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            datasets: vec![DatasetConfig::full(DatasetId::D1), DatasetConfig::full(DatasetId::D2)],
            detectors: default_detectors(),
            detector_params: DetectorParams::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.datasets.is_empty() {
            return Err(ExperimentError::Config("no datasets".into()));
        }
        if self.detectors.is_empty() {
            return Err(ExperimentError::Config("no detectors".into()));
        }
        let mut labels: Vec<String> = self.datasets.iter().map(DatasetConfig::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.datasets.len() {
            return Err(ExperimentError::Config("dataset labels must be unique".into()));
        }
        for d in &self.datasets {
            let victims: usize = d.compromise.values().sum();
            if victims > d.files {
                return Err(ExperimentError::Config(format!(
                    "{}: {victims} victims requested from {} files",
                    d.label(),
                    d.files
                )));
            }
        }
        validate_params(&self.detector_params)
    }
}

pub fn validate_params(p: &DetectorParams) -> Result<(), ExperimentError> {
    let bad = |m: &str| Err(ExperimentError::Config(m.into()));
    if !(p.z_threshold > 0.0) {
        return bad("z_threshold must be > 0");
    }
    if !(0.0..=1.0).contains(&p.small_cluster_fraction) {
        return bad("small_cluster_fraction must lie in [0, 1]");
    }
    if !(p.meanshift_quantile > 0.0 && p.meanshift_quantile <= 1.0) {
        return bad("meanshift_quantile must lie in (0, 1]");
    }
    if p.meanshift_bandwidth.is_some_and(|b| !(b > 0.0)) {
        return bad("meanshift_bandwidth must be > 0");
    }
    if p.dbscan_eps.is_some_and(|e| !(e > 0.0)) {
        return bad("dbscan_eps must be > 0");
    }
    if p.dbscan_min_samples == 0 {
        return bad("dbscan_min_samples must be >= 1");
    }
    Ok(())
}

/// Seed of a labeled stage of a dataset.
pub fn stage_seed(master: u64, stage: &str, label: &str) -> u64 {
    derive_seed(master, &format!("{stage}/{label}"))
}

/// Writes a pristine corpus and its manifest into `out_dir`.
pub fn generate(config: &DatasetConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest, ExperimentError> {
    let spec = config.dataset.specimen();
    Ok(synth::generate_dataset(
        config.dataset,
        &spec,
        config.files,
        config.angular_step,
        out_dir,
        seed,
    )?)
}

/// Copies `dataset_dir` into `blind_dir`, mutating the drawn victims, and
/// writes the ground truth and per-victim mutation logs.
pub fn compromise(
    dataset_dir: &Path,
    blind_dir: &Path,
    truth_path: &Path,
    logs_dir: &Path,
    counts: &BTreeMap<StrategyId, usize>,
    seed: u64,
) -> Result<(CompromisePlan, Vec<MutationLog>), ExperimentError> {
    let manifest = DatasetManifest::load(&dataset_dir.join(MANIFEST_FILE))?;
    let plan = mutate::plan_compromise(&manifest, counts, seed)?;
    create_dir(blind_dir)?;
    create_dir(logs_dir)?;
    let logs = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let src = dataset_dir.join(&entry.path);
            let dst = blind_dir.join(&entry.path);
            let bytes = fs::read(&src).map_err(io_err(&src))?;
            let Some(id) = plan.strategy_of(&entry.path) else {
                fs::write(&dst, &bytes).map_err(io_err(&dst))?;
                return Ok(None);
            };
            let doc = gcode::parse_document(&bytes)
                .map_err(|source| ExperimentError::Parse {
                    path: src.display().to_string(),
                    source,
                })?
                .with_source_path(entry.path.clone());
            let (mutated, log) = mutate::apply_strategy(&doc, Strategy::new(id))?;
            fs::write(&dst, gcode::serialize(&mutated)).map_err(io_err(&dst))?;
            write_json(&logs_dir.join(format!("{}.json", entry.path)), &log)?;
            Ok(Some(log))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?
        .into_iter()
        .flatten()
        .collect();
    manifest.save(&blind_dir.join(MANIFEST_FILE))?;
    write_json(truth_path, &plan)?;
    Ok((plan, logs))
}

/// Output of running detectors over one blind corpus.
pub struct DetectOutput {
    pub manifest: DatasetManifest,
    pub matrix: FeatureMatrix,
    pub flags: Vec<FlagSet>,
}

/// Featurizes `blind_dir` and runs `detectors`, writing flag sets, scatter
/// CSVs, and the feature matrix under `out_dir` when given.
pub fn detect(
    blind_dir: &Path,
    detectors: &[Detector],
    params: &DetectorParams,
    out_dir: Option<&Path>,
) -> Result<DetectOutput, ExperimentError> {
    let manifest = DatasetManifest::load(&blind_dir.join(MANIFEST_FILE))?;
    let matrix = features::build_matrix(&manifest, blind_dir)?;
    let runs = detectors
        .par_iter()
        .map(|&d| detect::run_detector(d, &matrix, params))
        .collect::<Result<Vec<_>, DetectError>>()?;
    if let Some(out) = out_dir {
        let flags_dir = out.join("flags");
        create_dir(&flags_dir)?;
        let features_path = out.join("features.csv");
        fs::write(&features_path, matrix.to_csv()).map_err(io_err(&features_path))?;
        for run in &runs {
            let p = flags_dir.join(format!("{}.json", run.flags.detector_name));
            fs::write(&p, run.flags.to_json()).map_err(io_err(&p))?;
            if let Some(proj) = &run.projection {
                let scatter = out.join("scatter");
                create_dir(&scatter)?;
                let p = scatter.join(format!("{}.csv", run.flags.detector_name));
                fs::write(&p, proj.to_csv(&matrix.paths)).map_err(io_err(&p))?;
            }
        }
    }
    Ok(DetectOutput {
        manifest,
        matrix,
        flags: runs.into_iter().map(|r| r.flags).collect(),
    })
}

/// Loads every `*.json` flag set in `flags_dir`, sorted by file name.
pub fn load_flag_sets(flags_dir: &Path) -> Result<Vec<FlagSet>, ExperimentError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(flags_dir)
        .map_err(io_err(flags_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

pub fn write_report(report: &DetectionReport, out_dir: &Path) -> Result<(), ExperimentError> {
    for (name, body) in [
        ("report.csv", report.to_csv()),
        ("report.json", report.to_json()),
        ("strategy_recall.csv", report.strategy_csv()),
    ] {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    Ok(())
}

/// What `run_all` would do, without touching disk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunPlan {
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub detectors: Vec<Detector>,
    pub datasets: Vec<PlannedDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedDataset {
    pub label: String,
    pub config: DatasetConfig,
    pub generate_seed: u64,
    pub compromise_seed: u64,
    pub victims: Vec<mutate::Victim>,
}

pub fn plan_run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunPlan, ExperimentError> {
    config.validate()?;
    let datasets = config
        .datasets
        .iter()
        .map(|d| {
            let label = d.label();
            let generate_seed = stage_seed(config.master_seed, "generate", &label);
            let compromise_seed = stage_seed(config.master_seed, "compromise", &label);
            let manifest = synth::plan_dataset(d.dataset, d.files, d.angular_step, generate_seed)?;
            let victims = mutate::plan_compromise(&manifest, &d.compromise, compromise_seed)?.victims;
            Ok(PlannedDataset {
                label,
                config: d.clone(),
                generate_seed,
                compromise_seed,
                victims,
            })
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(RunPlan {
        output_dir: out_dir.to_path_buf(),
        master_seed: config.master_seed,
        detectors: config.detectors.clone(),
        datasets,
    })
}

/// Runs every stage for every dataset and writes the report.
pub fn run_all(config: &ExperimentConfig, out_dir: &Path) -> Result<DetectionReport, ExperimentError> {
    let started = Instant::now();
    let plan = plan_run(config, out_dir)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join(CONFIG_FILE), config)?;
    let mut results: Vec<DatasetResult> = Vec::new();
    for d in &plan.datasets {
        let root = out_dir.join(&d.label);
        let (dataset_dir, blind_dir) = (root.join("dataset"), root.join("blind"));
        generate(&d.config, d.generate_seed, &dataset_dir)?;
        let (truth, _) = compromise(
            &dataset_dir,
            &blind_dir,
            &root.join(TRUTH_FILE),
            &root.join("mutation_logs"),
            &d.config.compromise,
            d.compromise_seed,
        )?;
        let out = detect(&blind_dir, &config.detectors, &config.detector_params, Some(&root))?;
        results.push(eval::evaluate_dataset(&d.label, &out.flags, &truth, &out.manifest)?);
    }
    let report = DetectionReport::new(results);
    write_report(&report, out_dir)?;
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    write_json(
        &out_dir.join(METADATA_FILE),
        &json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "generator_version": synth::GENERATOR_VERSION,
            "report_schema_version": eval::REPORT_SCHEMA_VERSION,
            "master_seed": config.master_seed,
            "detectors": config.detectors,
            "detector_params": config.detector_params,
            "datasets": plan.datasets.iter().map(|d| json!({
                "label": d.label,
                "dataset": d.config.dataset,
                "files": d.config.files,
                "angular_step": d.config.angular_step,
                "compromise": d.config.compromise,
                "generate_seed": d.generate_seed,
                "compromise_seed": d.compromise_seed,
            })).collect::<Vec<_>>(),
            "timing": {
                "finished_unix_seconds": timestamp,
                "elapsed_seconds": started.elapsed().as_secs_f64(),
            },
        }),
    )?;
    Ok(report)
}
