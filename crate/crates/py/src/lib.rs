//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built from the library's JSON representations.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use sentinel::detect::{self, cluster::pairwise_distance_quantile, Detector, DetectorParams};
use sentinel::eval::{self, DetectionReport};
use sentinel::experiment::{self, DatasetConfig, ExperimentConfig, ExperimentError};
use sentinel::gcode::{self, GcodeDocument};
use sentinel::mutate::{self, CompromisePlan, StrategyId};
use sentinel::synth::{self, DatasetId, DatasetManifest, MANIFEST_FILE};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn experiment_err(e: ExperimentError) -> PyErr {
    match e {
        ExperimentError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: for<'de> serde::Deserialize<'de>>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn parse_dataset(name: &str) -> PyResult<DatasetId> {
    match name.to_ascii_uppercase().as_str() {
        "D1" => Ok(DatasetId::D1),
        "D2" => Ok(DatasetId::D2),
        _ => Err(value_err(format!("unknown dataset {name:?} (expected D1 or D2)"))),
    }
}

fn parse_detectors(names: Option<Vec<String>>) -> PyResult<Vec<Detector>> {
    match names {
        None => Ok(Detector::DEFAULT.to_vec()),
        Some(n) => n.iter().map(|s| s.parse::<Detector>().map_err(value_err)).collect(),
    }
}

fn parse_params(py: Python<'_>, params: Option<&Bound<'_, PyAny>>) -> PyResult<DetectorParams> {
    let p = match params {
        Some(v) => from_py(py, v)?,
        None => DetectorParams::default(),
    };
    experiment::validate_params(&p).map_err(experiment_err)?;
    Ok(p)
}

/// A parsed g-code program that serializes back to its exact input bytes.
#[pyclass(name = "Document", module = "gcode_sentinel", frozen)]
struct PyDocument {
    inner: GcodeDocument,
}

#[pymethods]
impl PyDocument {
    #[staticmethod]
    fn parse(data: &[u8]) -> PyResult<Self> {
        Ok(PyDocument {
            inner: gcode::parse_document(data).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        let doc = gcode::parse_document(&bytes).map_err(value_err)?;
        Ok(PyDocument {
            inner: doc.with_source_path(path.to_string_lossy()),
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &gcode::serialize(&self.inner))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, gcode::serialize(&self.inner)).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))
    }

    fn lines(&self) -> Vec<String> {
        self.inner.lines().iter().map(|l| l.raw_text().to_string()).collect()
    }

    /// Simulation summary: final E, extruded length, bounds, command counts.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &gcode::simulate(&self.inner))
    }

    fn features<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &sentinel::features::extract(&self.inner))
    }

    /// Applies strategy `ID1`..`ID6`; returns the mutated document and its log.
    fn mutate<'py>(&self, py: Python<'py>, strategy: &str) -> PyResult<(PyDocument, Bound<'py, PyAny>)> {
        let id: StrategyId = strategy.parse().map_err(value_err)?;
        let (doc, log) = mutate::apply_strategy(&self.inner, mutate::Strategy::new(id)).map_err(value_err)?;
        Ok((PyDocument { inner: doc }, to_py(py, &log)?))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Document(lines={})", self.inner.len())
    }
}

/// Builds one specimen of `dataset` rotated by `angle` degrees.
#[pyfunction]
#[pyo3(signature = (dataset, angle, seed=0))]
fn build_specimen(dataset: &str, angle: f64, seed: u64) -> PyResult<PyDocument> {
    let spec = parse_dataset(dataset)?.specimen();
    Ok(PyDocument {
        inner: synth::build_specimen(&spec, angle, seed).map_err(value_err)?,
    })
}

/// Writes a rotation-sweep corpus and its manifest; returns the file count.
#[pyfunction]
#[pyo3(signature = (dataset, out, files=None, step=None, seed=0))]
fn generate(dataset: &str, out: PathBuf, files: Option<usize>, step: Option<f64>, seed: u64) -> PyResult<usize> {
    let id = parse_dataset(dataset)?;
    let (default_files, default_step) = id.default_sweep();
    let config = DatasetConfig {
        dataset: id,
        label: None,
        files: files.unwrap_or(default_files),
        angular_step: step.unwrap_or(default_step),
        compromise: BTreeMap::new(),
    };
    Ok(experiment::generate(&config, seed, &out).map_err(experiment_err)?.len())
}

/// Copies `input` to `out/blind`, mutating seeded victims; writes
/// `out/truth.json` and `out/mutation_logs`. Returns the ground truth.
#[pyfunction]
#[pyo3(signature = (input, out, counts, seed=0))]
fn compromise<'py>(py: Python<'py>, input: PathBuf, out: PathBuf, counts: BTreeMap<String, usize>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let counts = counts
        .into_iter()
        .map(|(k, v)| Ok((k.parse::<StrategyId>().map_err(value_err)?, v)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let (plan, _) = experiment::compromise(
        &input,
        &out.join("blind"),
        &out.join(experiment::TRUTH_FILE),
        &out.join("mutation_logs"),
        &counts,
        seed,
    )
    .map_err(experiment_err)?;
    to_py(py, &plan)
}

/// Runs detectors over a corpus directory; returns detector name to flagged paths.
#[pyfunction]
#[pyo3(signature = (input, detectors=None, params=None, out=None))]
fn run_detectors(
    py: Python<'_>,
    input: PathBuf,
    detectors: Option<Vec<String>>,
    params: Option<&Bound<'_, PyAny>>,
    out: Option<PathBuf>,
) -> PyResult<BTreeMap<String, Vec<String>>> {
    let detectors = parse_detectors(detectors)?;
    let params = parse_params(py, params)?;
    let result = py
        .detach(|| experiment::detect(&input, &detectors, &params, out.as_deref()))
        .map_err(experiment_err)?;
    Ok(result
        .flags
        .into_iter()
        .map(|f| (f.detector_name, f.flagged.into_iter().collect()))
        .collect())
}

/// Scores flag sets in `flags` against `truth` for the corpus at `input`.
#[pyfunction]
#[pyo3(signature = (flags, truth, input, label=None))]
fn evaluate<'py>(py: Python<'py>, flags: PathBuf, truth: PathBuf, input: PathBuf, label: Option<String>) -> PyResult<Bound<'py, PyAny>> {
    let truth: CompromisePlan = experiment::read_json(&truth).map_err(experiment_err)?;
    let manifest = DatasetManifest::load(&input.join(MANIFEST_FILE)).map_err(value_err)?;
    let sets = experiment::load_flag_sets(&flags).map_err(experiment_err)?;
    let label = label.unwrap_or_else(|| manifest.dataset_id.to_string());
    let result = eval::evaluate_dataset(&label, &sets, &truth, &manifest).map_err(value_err)?;
    to_py(py, &DetectionReport::new(vec![result]))
}

/// Full pipeline into `out`. `preset` is `desk`, `d1` or `full`; a config
/// path overrides it. Returns the report.
#[pyfunction]
#[pyo3(signature = (out, preset="desk", seed=None, config=None))]
fn run_all<'py>(py: Python<'py>, out: PathBuf, preset: &str, seed: Option<u64>, config: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p).map_err(experiment_err)?,
        None => {
            let mut c = ExperimentConfig::default();
            match preset {
                "full" => {}
                "desk" => c.datasets[1] = DatasetConfig::desk_d2(),
                "d1" => c.datasets.truncate(1),
                other => return Err(value_err(format!("unknown preset {other:?} (expected desk, d1 or full)"))),
            }
            c
        }
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let report = py.detach(|| experiment::run_all(&cfg, &out)).map_err(experiment_err)?;
    to_py(py, &report)
}

/// DBSCAN labels; noise is -1.
#[pyfunction]
#[pyo3(signature = (points, eps, min_samples=5))]
fn cluster_dbscan(points: Vec<Vec<f64>>, eps: f64, min_samples: usize) -> PyResult<Vec<i64>> {
    Ok(detect::cluster_dbscan(&points, eps, min_samples).map_err(value_err)?.labels)
}

/// Ward agglomerative labels, cut at the largest merge-height gap.
#[pyfunction]
fn cluster_agglomerative(points: Vec<Vec<f64>>) -> PyResult<Vec<i64>> {
    Ok(detect::cluster_agglomerative(&points).map_err(value_err)?.labels)
}

/// Flat-kernel mean shift; bandwidth defaults to the 30th percentile of
/// pairwise distances.
#[pyfunction]
#[pyo3(signature = (points, bandwidth=None))]
fn cluster_meanshift(points: Vec<Vec<f64>>, bandwidth: Option<f64>) -> PyResult<Vec<i64>> {
    let bw = bandwidth.unwrap_or_else(|| pairwise_distance_quantile(&points, DetectorParams::default().meanshift_quantile));
    Ok(detect::cluster_meanshift(&points, bw).map_err(value_err)?.labels)
}

/// PCA model (`mean`, `components`, `eigenvalues`) plus `projected` rows.
#[pyfunction]
#[pyo3(signature = (rows, k=2))]
fn fit_pca<'py>(py: Python<'py>, rows: Vec<Vec<f64>>, k: usize) -> PyResult<Bound<'py, PyAny>> {
    let (model, projected) = detect::fit_pca(&rows, k).map_err(value_err)?;
    let out = to_py(py, &model)?;
    out.set_item("projected", projected)?;
    Ok(out)
}

#[pyfunction]
fn strategies() -> Vec<(String, String)> {
    StrategyId::ALL.iter().map(|s| (s.to_string(), s.description().to_string())).collect()
}

#[pyfunction]
fn detectors() -> Vec<String> {
    Detector::ALL.iter().map(|d| d.name().to_string()).collect()
}

#[pymodule]
fn gcode_sentinel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDocument>()?;
    m.add_function(wrap_pyfunction!(build_specimen, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(compromise, m)?)?;
    m.add_function(wrap_pyfunction!(run_detectors, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_dbscan, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_agglomerative, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_meanshift, m)?)?;
    m.add_function(wrap_pyfunction!(fit_pca, m)?)?;
    m.add_function(wrap_pyfunction!(strategies, m)?)?;
    m.add_function(wrap_pyfunction!(detectors, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_names() {
        assert_eq!(parse_dataset("d1").unwrap(), DatasetId::D1);
        assert_eq!(parse_dataset("D2").unwrap(), DatasetId::D2);
    }

    #[test]
    fn detector_names() {
        assert_eq!(parse_detectors(None).unwrap(), Detector::DEFAULT.to_vec());
        let picked = parse_detectors(Some(vec!["dbscan".into(), "single-stat".into()])).unwrap();
        assert_eq!(picked, vec![Detector::Dbscan, Detector::SingleStat]);
    }
}
