use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gcode_sentinel::detect::{Detector, DetectorParams};
use gcode_sentinel::eval::{self, DetectionReport};
use gcode_sentinel::experiment::{self, DatasetConfig, ExperimentConfig};
use gcode_sentinel::mutate::{self, CompromisePlan, StrategyId};
use gcode_sentinel::synth::{self, DatasetId, DatasetManifest, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "gcode-sentinel", version, about = "Inject sabotage into g-code corpora and detect it blind")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Slice a specimen at a sweep of rotations into a pristine corpus.
    Generate(GenerateArgs),
    /// Copy a corpus into a blind directory, mutating randomly drawn victims.
    Compromise(CompromiseArgs),
    /// Featurize a blind corpus and write one flag set per detector.
    Detect(DetectArgs),
    /// Score flag sets against ground truth.
    Evaluate(EvaluateArgs),
    /// Run every stage for every configured dataset.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_dataset)]
    dataset: DatasetId,
    /// File count; defaults to the dataset's reference sweep.
    #[arg(long)]
    files: Option<usize>,
    /// Degrees between consecutive rotations.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct CompromiseArgs {
    /// Pristine corpus directory containing manifest.json.
    #[arg(long)]
    input: PathBuf,
    /// Receives blind/, truth.json and mutation_logs/.
    #[arg(long)]
    out: PathBuf,
    /// Victims per strategy, e.g. `ID1=2,ID4=5`.
    #[arg(long, value_parser = parse_counts)]
    counts: BTreeMap<StrategyId, usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Default)]
struct ParamArgs {
    /// JSON file with detector parameters; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    z_threshold: Option<f64>,
    #[arg(long)]
    cluster_fraction: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    bandwidth_quantile: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_samples: Option<usize>,
}

impl ParamArgs {
    fn apply(&self, mut p: DetectorParams) -> Result<DetectorParams> {
        if let Some(path) = &self.params {
            p = experiment::read_json(path)?;
        }
        p.z_threshold = self.z_threshold.unwrap_or(p.z_threshold);
        p.small_cluster_fraction = self.cluster_fraction.unwrap_or(p.small_cluster_fraction);
        p.meanshift_bandwidth = self.bandwidth.or(p.meanshift_bandwidth);
        p.meanshift_quantile = self.bandwidth_quantile.unwrap_or(p.meanshift_quantile);
        p.dbscan_eps = self.eps.or(p.dbscan_eps);
        p.dbscan_min_samples = self.min_samples.unwrap_or(p.dbscan_min_samples);
        experiment::validate_params(&p)?;
        Ok(p)
    }
}

#[derive(Args)]
struct DetectArgs {
    /// Blind corpus directory containing manifest.json.
    #[arg(long)]
    input: PathBuf,
    /// Receives flags/, scatter/ and features.csv.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated detector names; defaults to the standard four.
    #[arg(long, value_delimiter = ',', value_parser = parse_detector)]
    detectors: Vec<Detector>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of flag-set JSON files.
    #[arg(long)]
    flags: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Corpus directory whose manifest.json lists every file.
    #[arg(long)]
    input: PathBuf,
    /// Column-group label in the report; defaults to the dataset id.
    #[arg(long)]
    label: Option<String>,
    /// Receives report.csv, report.json and strategy_recall.csv; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// D1 (180 files) and D2 (4320 files).
    Full,
    /// D1 (180 files) and desk-scale D2 (720 files).
    Desk,
    /// D1 only.
    D1,
}

#[derive(Args)]
struct RunAllArgs {
    /// Experiment config JSON; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Run directory; falls back to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_detector)]
    detectors: Vec<Detector>,
    #[command(flatten)]
    params: ParamArgs,
    /// Print the resolved plan and write nothing.
    #[arg(long)]
    dry_run: bool,
}

fn parse_dataset(s: &str) -> Result<DatasetId, String> {
    match s.to_ascii_uppercase().as_str() {
        "D1" => Ok(DatasetId::D1),
        "D2" => Ok(DatasetId::D2),
        _ => Err(format!("unknown dataset {s:?} (expected D1 or D2)")),
    }
}

fn parse_detector(s: &str) -> Result<Detector, String> {
    s.parse::<Detector>().map_err(|e| {
        let names: Vec<&str> = Detector::ALL.iter().map(|d| d.name()).collect();
        format!("{e}; expected one of {}", names.join(", "))
    })
}

fn parse_counts(s: &str) -> Result<BTreeMap<StrategyId, usize>, String> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|pair| {
            let (id, n) = pair.split_once('=').ok_or_else(|| format!("expected ID=COUNT, got {pair:?}"))?;
            let id = id.trim().parse::<StrategyId>().map_err(|e| e.to_string())?;
            let n: usize = n.trim().parse().map_err(|e| format!("bad count in {pair:?}: {e}"))?;
            Ok((id, n))
        })
        .collect()
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let (default_files, default_step) = a.dataset.default_sweep();
    let config = DatasetConfig {
        dataset: a.dataset,
        label: None,
        files: a.files.unwrap_or(default_files),
        angular_step: a.step.unwrap_or(default_step),
        compromise: BTreeMap::new(),
    };
    if a.dry_run {
        return print_json(&synth::plan_dataset(config.dataset, config.files, config.angular_step, a.seed)?);
    }
    let m = experiment::generate(&config, a.seed, &a.out)?;
    eprintln!("wrote {} files to {}", m.len(), a.out.display());
    Ok(())
}

fn cmd_compromise(a: CompromiseArgs) -> Result<()> {
    if a.dry_run {
        let manifest = DatasetManifest::load(&a.input.join(MANIFEST_FILE))?;
        return print_json(&mutate::plan_compromise(&manifest, &a.counts, a.seed)?);
    }
    let (plan, _) = experiment::compromise(
        &a.input,
        &a.out.join("blind"),
        &a.out.join(experiment::TRUTH_FILE),
        &a.out.join("mutation_logs"),
        &a.counts,
        a.seed,
    )?;
    eprintln!("compromised {} files into {}", plan.victims.len(), a.out.join("blind").display());
    Ok(())
}

fn detectors_or_default(d: Vec<Detector>) -> Vec<Detector> {
    if d.is_empty() {
        Detector::DEFAULT.to_vec()
    } else {
        d
    }
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let params = a.params.apply(DetectorParams::default())?;
    let detectors = detectors_or_default(a.detectors);
    if a.dry_run {
        return print_json(&serde_json::json!({"input": a.input, "detectors": detectors, "params": params}));
    }
    let out = experiment::detect(&a.input, &detectors, &params, Some(&a.out))?;
    for f in &out.flags {
        eprintln!("{}: {} of {} flagged", f.detector_name, f.flagged.len(), out.manifest.len());
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let truth: CompromisePlan = experiment::read_json(&a.truth).with_context(|| "reading ground truth")?;
    let manifest = DatasetManifest::load(&a.input.join(MANIFEST_FILE))?;
    let flags = experiment::load_flag_sets(&a.flags)?;
    if flags.is_empty() {
        bail!("no flag sets in {}", a.flags.display());
    }
    let label = a.label.unwrap_or_else(|| manifest.dataset_id.to_string());
    let report = DetectionReport::new(vec![eval::evaluate_dataset(&label, &flags, &truth, &manifest)?]);
    match a.out {
        Some(out) => {
            std::fs::create_dir_all(&out)?;
            experiment::write_report(&report, &out)?;
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn resolve_config(a: &RunAllArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let mut c = ExperimentConfig::default();
            match a.preset {
                Preset::Full => {}
                Preset::Desk => c.datasets[1] = DatasetConfig::desk_d2(),
                Preset::D1 => c.datasets.truncate(1),
            }
            c
        }
    };
    if let Some(s) = a.seed {
        config.master_seed = s;
    }
    if !a.detectors.is_empty() {
        config.detectors = a.detectors.clone();
    }
    config.detector_params = a.params.apply(config.detector_params)?;
    let Some(out) = a.out.clone().or_else(|| config.output_dir.clone()) else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    config.validate()?;
    Ok((config, out))
}

fn cmd_run_all(a: RunAllArgs) -> Result<()> {
    let (config, out) = resolve_config(&a)?;
    if a.dry_run {
        return print_json(&experiment::plan_run(&config, &out)?);
    }
    let report = experiment::run_all(&config, &out)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Compromise(a) => cmd_compromise(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::RunAll(a) => cmd_run_all(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // causes already folded into a message are not repeated
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use std::path::Path;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn counts_parse() {
        let c = parse_counts("ID1=2,ID6=3").unwrap();
        assert_eq!(c[&StrategyId::Id1], 2);
        assert_eq!(c[&StrategyId::Id6], 3);
        assert!(parse_counts("ID9=1").is_err());
        assert!(parse_counts("ID1").is_err());
    }

    #[test]
    fn unknown_detector_is_usage_error() {
        let r = Cli::try_parse_from(["gcode-sentinel", "detect", "--input", "x", "--out", "y", "--detectors", "kmeans"]);
        assert_eq!(r.err().unwrap().kind(), clap::error::ErrorKind::ValueValidation);
    }

    #[test]
    fn run_all_overrides() {
        let cli = Cli::try_parse_from(["gcode-sentinel", "run-all", "--preset", "d1", "--seed", "5", "--out", "o", "--z-threshold", "4"]).unwrap();
        let Command::RunAll(a) = cli.command else { panic!() };
        let (c, out) = resolve_config(&a).unwrap();
        assert_eq!((c.master_seed, c.datasets.len(), c.detector_params.z_threshold), (5, 1, 4.0));
        assert_eq!(out, Path::new("o"));
    }
}
