//! Median/MAD outlier rules behind the statistical detectors.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::{DetectError, FlagSet};
use crate::features::{FeatureMatrix, COL_G0, COL_G1};

/// Scale that makes the MAD a consistent estimator of a normal sigma.
pub const MAD_SCALE: f64 = 0.6745;
pub const IQR_FENCE: f64 = 1.5;
pub const MIN_ROWS: usize = 10;

/// Median of an unsorted sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mad(values: &[f64], center: f64) -> f64 {
    let dev: Vec<f64> = values.iter().map(|x| (x - center).abs()).collect();
    median(&dev)
}

/// Linearly interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub(crate) fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Low,
    High,
    Both,
}

/// Signed outlier scores for one column plus the rule that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScores {
    /// Modified z-scores, or, when the MAD is zero, the signed distance past
    /// the nearer IQR fence (0 inside the fences).
    pub scores: Vec<f64>,
    pub median: f64,
    pub mad: f64,
    pub iqr_fallback: bool,
}

pub fn score_column(values: &[f64]) -> ColumnScores {
    let med = median(values);
    let spread = mad(values, med);
    if spread > 0.0 {
        return ColumnScores {
            scores: values.iter().map(|x| MAD_SCALE * (x - med) / spread).collect(),
            median: med,
            mad: spread,
            iqr_fallback: false,
        };
    }
    let q1 = quantile(values, 0.25);
    let q3 = quantile(values, 0.75);
    let (lo, hi) = (q1 - IQR_FENCE * (q3 - q1), q3 + IQR_FENCE * (q3 - q1));
    let scores = values
        .iter()
        .map(|&x| {
            if x < lo {
                x - lo
            } else if x > hi {
                x - hi
            } else {
                0.0
            }
        })
        .collect();
    ColumnScores {
        scores,
        median: med,
        mad: 0.0,
        iqr_fallback: true,
    }
}

impl ColumnScores {
    pub fn is_outlier(&self, i: usize, threshold: f64, side: Side) -> bool {
        let s = self.scores[i];
        // outside the fences the score is already nonzero
        let t = if self.iqr_fallback { 0.0 } else { threshold };
        match side {
            Side::Low => s < -t,
            Side::High => s > t,
            Side::Both => s.abs() > t,
        }
    }
}

fn require_rows(matrix: &FeatureMatrix) -> Result<(), DetectError> {
    if matrix.len() < MIN_ROWS {
        return Err(DetectError::TooFewRows {
            needed: MIN_ROWS,
            got: matrix.len(),
        });
    }
    Ok(())
}

/// Flags files whose `G1` count is a two-sided robust outlier.
pub fn detect_single_stat(matrix: &FeatureMatrix, threshold: f64) -> Result<FlagSet, DetectError> {
    require_rows(matrix)?;
    let g1 = score_column(&matrix.column(COL_G1));
    let mut flagged = BTreeSet::new();
    let mut scores = BTreeMap::new();
    for (i, path) in matrix.paths.iter().enumerate() {
        scores.insert(path.clone(), g1.scores[i]);
        if g1.is_outlier(i, threshold, Side::Both) {
            flagged.insert(path.clone());
        }
    }
    Ok(FlagSet {
        detector_name: super::Detector::SingleStat.name().into(),
        flagged,
        scores: Some(scores),
        parameters: json!({
            "column": "G1",
            "threshold": threshold,
            "side": "both",
            "median": g1.median,
            "mad": g1.mad,
            "iqr_fallback": g1.iqr_fallback,
        }),
    })
}

/// Flags files that are robust outliers on the `G0` or `G1` count, or that
/// carry any E value whose decimal count differs from the dataset mode.
pub fn detect_combined_stat(matrix: &FeatureMatrix, threshold: f64) -> Result<FlagSet, DetectError> {
    require_rows(matrix)?;
    let g0 = score_column(&matrix.column(COL_G0));
    let g1 = score_column(&matrix.column(COL_G1));
    let mut flagged = BTreeSet::new();
    let mut scores = BTreeMap::new();
    for (i, path) in matrix.paths.iter().enumerate() {
        let anomalies = matrix.rows[i].e_decimal_anomaly_count;
        scores.insert(path.clone(), g0.scores[i].abs().max(g1.scores[i].abs()));
        if g0.is_outlier(i, threshold, Side::Both) || g1.is_outlier(i, threshold, Side::Both) || anomalies > 0 {
            flagged.insert(path.clone());
        }
    }
    Ok(FlagSet {
        detector_name: super::Detector::CombinedStat.name().into(),
        flagged,
        scores: Some(scores),
        parameters: json!({
            "columns": ["G0", "G1"],
            "threshold": threshold,
            "side": "both",
            "g0_median": g0.median,
            "g0_mad": g0.mad,
            "g1_median": g1.median,
            "g1_mad": g1.mad,
            "e_decimal_reference": matrix.e_decimal_reference,
        }),
    })
}
