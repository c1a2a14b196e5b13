//! Blue-team detectors. Each consumes a [`FeatureMatrix`] and returns a
//! [`FlagSet`] naming the files it considers compromised.

pub mod cluster;
pub mod dbscan;
pub mod pca;
pub mod robust;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::features::{self, FeatureMatrix};

pub use cluster::{cluster_agglomerative, cluster_meanshift, Algorithm, ClusterLabels, NOISE};
pub use dbscan::cluster_dbscan;
pub use pca::{fit_pca, PcaModel};
pub use robust::{detect_combined_stat, detect_single_stat};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("mean-shift bandwidth is zero (all points identical)")]
    ZeroBandwidth,
    #[error("unknown detector {0:?}")]
    UnknownDetector(String),
}

/// Files flagged by one detector, with everything needed to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagSet {
    #[serde(rename = "detector")]
    pub detector_name: String,
    pub parameters: serde_json::Value,
    pub flagged: BTreeSet<String>,
    pub scores: Option<BTreeMap<String, f64>>,
}

impl FlagSet {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("flag sets serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    SingleStat,
    CombinedStat,
    PcaAgglomerative,
    PcaMeanshift,
    Dbscan,
}

impl Detector {
    pub const ALL: [Detector; 5] = [
        Detector::SingleStat,
        Detector::CombinedStat,
        Detector::PcaAgglomerative,
        Detector::PcaMeanshift,
        Detector::Dbscan,
    ];
    /// The four methods of the reference study; mean shift is opt-in.
    pub const DEFAULT: [Detector; 4] = [
        Detector::SingleStat,
        Detector::CombinedStat,
        Detector::PcaAgglomerative,
        Detector::Dbscan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::SingleStat => "single-stat",
            Detector::CombinedStat => "combined-stat",
            Detector::PcaAgglomerative => "pca-agglomerative",
            Detector::PcaMeanshift => "pca-meanshift",
            Detector::Dbscan => "dbscan",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Detector::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| DetectError::UnknownDetector(s.to_string()))
    }
}

/// Rejects empty-width, ragged, or non-finite point sets.
pub(crate) fn check_points(points: &[Vec<f64>]) -> Result<(), DetectError> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(DetectError::InvalidParams("points must be finite and of equal dimension".into()));
    }
    Ok(())
}

/// Tunables shared by all detectors. `None` selects a data-driven default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub z_threshold: f64,
    pub small_cluster_fraction: f64,
    pub meanshift_bandwidth: Option<f64>,
    pub meanshift_quantile: f64,
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_samples: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            z_threshold: 3.5,
            small_cluster_fraction: 0.01,
            meanshift_bandwidth: None,
            meanshift_quantile: 0.3,
            dbscan_eps: None,
            dbscan_min_samples: 5,
        }
    }
}

/// Labels of a PCA-based detector run, kept for scatter export.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub model: PcaModel,
    pub points: Vec<Vec<f64>>,
    pub labels: ClusterLabels,
}

impl Projection {
    /// CSV with columns `path,pc1,pc2,cluster_label`.
    pub fn to_csv(&self, paths: &[String]) -> String {
        let mut out = String::from("path,pc1,pc2,cluster_label\n");
        for ((path, p), l) in paths.iter().zip(&self.points).zip(&self.labels.labels) {
            writeln!(out, "{path},{},{},{l}", p[0], p[1]).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRun {
    pub flags: FlagSet,
    pub projection: Option<Projection>,
}

/// Size at or below which a cluster counts as anomalous.
pub fn small_cluster_limit(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).floor() as usize).max(2)
}

/// Flags noise points and members of clusters no larger than
/// `max(2, fraction * N)`.
pub fn flags_from_clusters(labels: &ClusterLabels, paths: &[String], fraction: f64) -> BTreeSet<String> {
    let limit = small_cluster_limit(labels.labels.len(), fraction);
    let sizes = labels.sizes();
    labels
        .labels
        .iter()
        .zip(paths)
        .filter(|(&l, _)| l < 0 || sizes[l as usize] <= limit)
        .map(|(_, p)| p.clone())
        .collect()
}

fn standardized(matrix: &FeatureMatrix) -> Result<Vec<Vec<f64>>, DetectError> {
    features::standardize(matrix).map_err(|_| DetectError::TooFewRows {
        needed: 2,
        got: matrix.len(),
    })
}

fn cluster_flagset(
    detector: Detector,
    matrix: &FeatureMatrix,
    labels: &ClusterLabels,
    fraction: f64,
    mut parameters: serde_json::Value,
) -> FlagSet {
    parameters["small_cluster_fraction"] = json!(fraction);
    parameters["small_cluster_limit"] = json!(small_cluster_limit(matrix.len(), fraction));
    parameters["cluster_sizes"] = json!(labels.sizes());
    FlagSet {
        detector_name: detector.name().into(),
        flagged: flags_from_clusters(labels, &matrix.paths, fraction),
        scores: None,
        parameters,
    }
}

pub fn run_detector(
    detector: Detector,
    matrix: &FeatureMatrix,
    params: &DetectorParams,
) -> Result<DetectorRun, DetectError> {
    match detector {
        Detector::SingleStat => Ok(DetectorRun {
            flags: detect_single_stat(matrix, params.z_threshold)?,
            projection: None,
        }),
        Detector::CombinedStat => Ok(DetectorRun {
            flags: detect_combined_stat(matrix, params.z_threshold)?,
            projection: None,
        }),
        Detector::PcaAgglomerative | Detector::PcaMeanshift => {
            let (model, points) = fit_pca(&standardized(matrix)?, 2)?;
            let (labels, parameters) = if detector == Detector::PcaAgglomerative {
                (
                    cluster_agglomerative(&points)?,
                    json!({
                        "linkage": "ward",
                        "cut": "largest-log-gap",
                        "max_clusters": cluster::max_cut_clusters(points.len()),
                        "pca_components": 2,
                    }),
                )
            } else {
                let bandwidth = match params.meanshift_bandwidth {
                    Some(b) => b,
                    None => cluster::pairwise_distance_quantile(&points, params.meanshift_quantile),
                };
                (
                    cluster_meanshift(&points, bandwidth)?,
                    json!({
                        "kernel": "flat",
                        "bandwidth": bandwidth,
                        "bandwidth_quantile": params.meanshift_quantile,
                        "pca_components": 2,
                    }),
                )
            };
            let flags = cluster_flagset(detector, matrix, &labels, params.small_cluster_fraction, parameters);
            Ok(DetectorRun {
                flags,
                projection: Some(Projection { model, points, labels }),
            })
        }
        Detector::Dbscan => {
            let rows = standardized(matrix)?;
            let eps = match params.dbscan_eps {
                Some(e) => e,
                None => dbscan::default_eps(&rows, params.dbscan_min_samples),
            };
            let labels = cluster_dbscan(&rows, eps, params.dbscan_min_samples)?;
            let parameters = json!({"eps": eps, "min_samples": params.dbscan_min_samples, "space": "standardized-core"});
            let flags = cluster_flagset(detector, matrix, &labels, params.small_cluster_fraction, parameters);
            Ok(DetectorRun {
                flags,
                projection: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(l: Vec<i64>) -> ClusterLabels {
        ClusterLabels {
            labels: l,
            algorithm: Algorithm::Dbscan,
        }
    }

    fn paths(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn one_cluster_flags_nothing() {
        assert!(flags_from_clusters(&labels(vec![0; 50]), &paths(50), 0.01).is_empty());
    }

    #[test]
    fn two_point_cluster_among_180() {
        let mut l = vec![0; 180];
        l[17] = 1;
        l[99] = 1;
        let f = flags_from_clusters(&labels(l), &paths(180), 0.01);
        assert_eq!(f.into_iter().collect::<Vec<_>>(), vec!["p017", "p099"]);
    }

    #[test]
    fn three_point_cluster_survives_at_180() {
        let mut l = vec![0; 180];
        l[1..4].fill(1);
        assert!(flags_from_clusters(&labels(l), &paths(180), 0.01).is_empty());
    }

    #[test]
    fn noise_always_flagged() {
        let mut l = vec![0; 20];
        l[5] = NOISE;
        let f = flags_from_clusters(&labels(l), &paths(20), 0.01);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn detector_names_round_trip() {
        for d in Detector::ALL {
            assert_eq!(d.name().parse::<Detector>().unwrap(), d);
        }
        assert!("kmeans".parse::<Detector>().is_err());
    }

    #[test]
    fn flagset_json_shape() {
        let f = FlagSet {
            detector_name: "single-stat".into(),
            flagged: ["a".to_string()].into(),
            scores: None,
            parameters: json!({"threshold": 3.5}),
        };
        let v: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(v["detector"], "single-stat");
        assert_eq!(v["flagged"], json!(["a"]));
        assert_eq!(FlagSet::from_json(&f.to_json()).unwrap(), f);
    }
}
