//! Per-file feature vectors and the dataset feature matrix.
//!
//! The core vector has 11 columns in a fixed order: counts of the ten command
//! codes in [`CORE_CODES`] followed by the total number of lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcode::{self, GcodeDocument};
use crate::synth::DatasetManifest;

pub const CORE_CODES: [&str; 10] = ["G0", "G1", "G92", "M82", "M84", "M104", "M105", "M106", "M107", "M140"];
pub const CORE_DIM: usize = 11;
pub const COL_G0: usize = 0;
pub const COL_G1: usize = 1;
pub const COL_TOTAL_LINES: usize = 10;

pub fn core_column_names() -> [&'static str; CORE_DIM] {
    let mut names = ["total_lines"; CORE_DIM];
    names[..10].copy_from_slice(&CORE_CODES);
    names
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: gcode::GcodeError,
    },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub core: [f64; CORE_DIM],
    pub layer_count: usize,
    /// `[xmin, xmax, ymin, ymax, zmin, zmax]`
    pub bounds: [f64; 6],
    pub total_extruded: f64,
    pub e_decimal_histogram: BTreeMap<u32, usize>,
    /// Most frequent decimal count among this file's E values.
    pub e_decimal_mode: Option<u32>,
    /// E values whose decimal count differs from the reference count. The
    /// reference is this file's own mode until the vector joins a matrix,
    /// which re-scores it against the dataset-wide mode.
    pub e_decimal_anomaly_count: usize,
}

impl FeatureVector {
    pub fn e_token_count(&self) -> usize {
        self.e_decimal_histogram.values().sum()
    }

    fn rescore(&mut self, reference: Option<u32>) {
        let matching = reference.and_then(|r| self.e_decimal_histogram.get(&r)).copied().unwrap_or(0);
        self.e_decimal_anomaly_count = self.e_token_count() - matching;
    }
}

/// Mode of a decimal histogram; ties go to the smaller decimal count.
fn histogram_mode(h: &BTreeMap<u32, usize>) -> Option<u32> {
    h.iter()
        .fold(None, |best: Option<(u32, usize)>, (&d, &n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((d, n)),
        })
        .map(|(d, _)| d)
}

pub fn extract(document: &GcodeDocument) -> FeatureVector {
    let summary = gcode::simulate(document);
    let mut core = [0.0; CORE_DIM];
    for (slot, code) in core.iter_mut().zip(CORE_CODES) {
        *slot = summary.count(code) as f64;
    }
    core[COL_TOTAL_LINES] = summary.total_lines as f64;
    let e_decimal_mode = histogram_mode(&summary.e_decimal_histogram);
    let mut v = FeatureVector {
        core,
        layer_count: summary.layer_count,
        bounds: summary.bounds.flat(),
        total_extruded: summary.total_extruded,
        e_decimal_histogram: summary.e_decimal_histogram,
        e_decimal_mode,
        e_decimal_anomaly_count: 0,
    };
    v.rescore(e_decimal_mode);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub paths: Vec<String>,
    pub rows: Vec<FeatureVector>,
    pub column_means: [f64; CORE_DIM],
    /// Population standard deviations.
    pub column_stds: [f64; CORE_DIM],
    pub zero_variance: [bool; CORE_DIM],
    /// Dataset-wide modal decimal count of E values.
    pub e_decimal_reference: Option<u32>,
}

impl FeatureMatrix {
    pub fn from_rows(paths: Vec<String>, mut rows: Vec<FeatureVector>) -> Self {
        assert_eq!(paths.len(), rows.len(), "one path per row");
        let mut pooled: BTreeMap<u32, usize> = BTreeMap::new();
        for r in &rows {
            for (&d, &n) in &r.e_decimal_histogram {
                *pooled.entry(d).or_default() += n;
            }
        }
        let reference = histogram_mode(&pooled);
        rows.iter_mut().for_each(|r| r.rescore(reference));

        let n = rows.len() as f64;
        let mut column_means = [0.0; CORE_DIM];
        let mut column_stds = [0.0; CORE_DIM];
        let mut zero_variance = [true; CORE_DIM];
        if !rows.is_empty() {
            for j in 0..CORE_DIM {
                let mean = rows.iter().map(|r| r.core[j]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r.core[j] - mean).powi(2)).sum::<f64>() / n;
                column_means[j] = mean;
                column_stds[j] = var.sqrt();
                zero_variance[j] = rows.iter().all(|r| r.core[j] == rows[0].core[j]);
            }
        }
        FeatureMatrix {
            paths,
            rows,
            column_means,
            column_stds,
            zero_variance,
            e_decimal_reference: reference,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.core[j]).collect()
    }

    pub fn core_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.core.to_vec()).collect()
    }

    /// CSV with a header naming every core and auxiliary column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path");
        for name in core_column_names() {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",layer_count,xmin,xmax,ymin,ymax,zmin,zmax,total_extruded,e_decimal_mode,e_decimal_anomaly_count\n");
        for (path, r) in self.paths.iter().zip(&self.rows) {
            out.push_str(path);
            for v in r.core {
                write!(out, ",{v}").unwrap();
            }
            write!(out, ",{}", r.layer_count).unwrap();
            for v in r.bounds {
                write!(out, ",{v}").unwrap();
            }
            let mode = r.e_decimal_mode.map_or(String::new(), |m| m.to_string());
            writeln!(out, ",{},{},{}", r.total_extruded, mode, r.e_decimal_anomaly_count).unwrap();
        }
        out
    }
}

/// Reads and featurizes every manifest entry under `dir`, in manifest order.
pub fn build_matrix(manifest: &DatasetManifest, dir: &Path) -> Result<FeatureMatrix, FeatureError> {
    let rows = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let path = dir.join(&entry.path);
            let bytes = fs::read(&path).map_err(|source| FeatureError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let doc = gcode::parse_document(&bytes).map_err(|source| FeatureError::Parse {
                path: entry.path.clone(),
                source,
            })?;
            Ok(extract(&doc))
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok(FeatureMatrix::from_rows(manifest.paths().map(String::from).collect(), rows))
}

/// Per-column z-scores of the core features. Zero-variance columns map to 0.
pub fn standardize(matrix: &FeatureMatrix) -> Result<Vec<Vec<f64>>, FeatureError> {
    if matrix.len() < 2 {
        return Err(FeatureError::TooFewRows {
            needed: 2,
            got: matrix.len(),
        });
    }
    Ok(matrix
        .rows
        .iter()
        .map(|r| {
            (0..CORE_DIM)
                .map(|j| {
                    if matrix.zero_variance[j] {
                        0.0
                    } else {
                        (r.core[j] - matrix.column_means[j]) / matrix.column_stds[j]
                    }
                })
                .collect()
        })
        .collect())
}
