use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_points, DetectError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-length principal axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Population variance along each component.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect()
    }
}

/// Top-`k` principal components of the population covariance of `rows`.
/// Each component is signed so its largest-magnitude entry is positive.
pub fn fit_pca(rows: &[Vec<f64>], k: usize) -> Result<(PcaModel, Vec<Vec<f64>>), DetectError> {
    let n = rows.len();
    if n < 3 {
        return Err(DetectError::TooFewRows { needed: 3, got: n });
    }
    check_points(rows)?;
    let dim = rows[0].len();
    if k == 0 || k > dim {
        return Err(DetectError::InvalidParams(format!("cannot keep {k} of {dim} dimensions")));
    }
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    let model = PcaModel {
        mean,
        components,
        eigenvalues,
    };
    let projected = rows.iter().map(|r| model.project(r)).collect();
    Ok((model, projected))
}
