//! Scores detector flags against the held-back ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::FlagSet;
use crate::mutate::{CompromisePlan, StrategyId};
use crate::synth::DatasetManifest;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{detector} flagged {path:?}, which is not in the manifest")]
    UnknownPath { detector: String, path: String },
    #[error("ground truth names {path:?}, which is not in the manifest")]
    UnknownVictim { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Exact set arithmetic of `flags` against the victims of `truth`.
pub fn confusion(flags: &FlagSet, truth: &CompromisePlan, manifest: &DatasetManifest) -> Result<ConfusionMatrix, EvalError> {
    let all: BTreeSet<&str> = manifest.paths().collect();
    if let Some(p) = flags.flagged.iter().find(|p| !all.contains(p.as_str())) {
        return Err(EvalError::UnknownPath {
            detector: flags.detector_name.clone(),
            path: p.clone(),
        });
    }
    let victims: BTreeSet<&str> = truth.victims.iter().map(|v| v.path.as_str()).collect();
    if let Some(p) = victims.iter().find(|p| !all.contains(*p)) {
        return Err(EvalError::UnknownVictim { path: p.to_string() });
    }
    let tp = victims.iter().filter(|p| flags.flagged.contains(**p)).count();
    let fp = flags.flagged.len() - tp;
    let m = ConfusionMatrix {
        tp,
        fp,
        fn_: victims.len() - tp,
        tn: all.len() - victims.len() - fp,
    };
    assert_eq!(m.total(), all.len(), "confusion totals must equal the dataset size");
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyRecall {
    pub victims: usize,
    pub detected: usize,
    pub recall: f64,
}

/// Recall per strategy; strategies without victims are omitted.
pub type StrategyBreakdown = BTreeMap<StrategyId, StrategyRecall>;

pub fn per_strategy(flags: &FlagSet, truth: &CompromisePlan) -> StrategyBreakdown {
    let mut out: StrategyBreakdown = BTreeMap::new();
    for v in &truth.victims {
        let e = out.entry(v.strategy).or_insert(StrategyRecall {
            victims: 0,
            detected: 0,
            recall: 0.0,
        });
        e.victims += 1;
        if flags.flagged.contains(&v.path) {
            e.detected += 1;
        }
    }
    for e in out.values_mut() {
        e.recall = e.detected as f64 / e.victims as f64;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub detector: String,
    pub confusion: ConfusionMatrix,
    pub per_strategy: StrategyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    /// Column-group label, e.g. `D1`.
    pub dataset: String,
    pub files: usize,
    pub victims: usize,
    pub detectors: Vec<DetectorResult>,
}

pub fn evaluate_dataset(
    label: &str,
    flag_sets: &[FlagSet],
    truth: &CompromisePlan,
    manifest: &DatasetManifest,
) -> Result<DatasetResult, EvalError> {
    let detectors = flag_sets
        .iter()
        .map(|f| {
            Ok(DetectorResult {
                detector: f.detector_name.clone(),
                confusion: confusion(f, truth, manifest)?,
                per_strategy: per_strategy(f, truth),
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(DatasetResult {
        dataset: label.to_string(),
        files: manifest.len(),
        victims: truth.victims.len(),
        detectors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    pub datasets: Vec<DatasetResult>,
}

impl DetectionReport {
    pub fn new(datasets: Vec<DatasetResult>) -> Self {
        DetectionReport {
            schema_version: REPORT_SCHEMA_VERSION,
            datasets,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// One row per detector, one `TP,FP,TN,FN` column group per dataset.
    /// A detector missing from a dataset leaves its cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("detector");
        for d in &self.datasets {
            for c in ["TP", "FP", "TN", "FN"] {
                write!(out, ",{}_{c}", d.dataset).unwrap();
            }
        }
        out.push('\n');
        let mut names: Vec<&str> = Vec::new();
        for r in self.datasets.iter().flat_map(|d| &d.detectors) {
            if !names.contains(&r.detector.as_str()) {
                names.push(&r.detector);
            }
        }
        for name in names {
            out.push_str(name);
            for d in &self.datasets {
                match d.detectors.iter().find(|r| r.detector == name) {
                    Some(r) => {
                        let c = r.confusion;
                        write!(out, ",{},{},{},{}", c.tp, c.fp, c.tn, c.fn_).unwrap();
                    }
                    None => out.push_str(",,,,"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Per-strategy recall as CSV: `dataset,detector,strategy,victims,detected,recall`.
    pub fn strategy_csv(&self) -> String {
        let mut out = String::from("dataset,detector,strategy,victims,detected,recall\n");
        for d in &self.datasets {
            for r in &d.detectors {
                for (s, b) in &r.per_strategy {
                    writeln!(out, "{},{},{s},{},{},{}", d.dataset, r.detector, b.victims, b.detected, b.recall).unwrap();
                }
            }
        }
        out
    }
}
