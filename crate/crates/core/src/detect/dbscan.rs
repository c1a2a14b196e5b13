use std::collections::VecDeque;

use super::cluster::{sq_dist, Algorithm, ClusterLabels, NOISE};
use super::{check_points, DetectError};

const UNVISITED: i64 = i64::MIN;

/// Neighbourhood queries over points sorted along their widest coordinate.
struct SortedIndex<'a> {
    points: &'a [Vec<f64>],
    axis: usize,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl<'a> SortedIndex<'a> {
    fn new(points: &'a [Vec<f64>]) -> Self {
        let dim = points[0].len();
        let spread = |j: usize| {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[j]), hi.max(p[j])));
            hi - lo
        };
        let axis = (0..dim).fold(0, |best, j| if spread(j) > spread(best) { j } else { best });
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let keys = order.iter().map(|&i| points[i][axis]).collect();
        SortedIndex {
            points,
            axis,
            order,
            keys,
        }
    }

    /// Indices within `eps` of point `i` (itself included), ascending.
    fn region(&self, i: usize, eps: f64) -> Vec<usize> {
        let x = self.points[i][self.axis];
        let start = self.keys.partition_point(|&k| k < x - eps);
        let mut out: Vec<usize> = self.keys[start..]
            .iter()
            .zip(&self.order[start..])
            .take_while(|(k, _)| **k <= x + eps)
            // compare true distances so eps taken from k_distances is inclusive
            .filter(|(_, j)| sq_dist(&self.points[i], &self.points[**j]).sqrt() <= eps)
            .map(|(_, &j)| j)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Density clustering. A point is core when at least `min_samples` points
/// (itself included) lie within `eps`. Clusters grow breadth-first from core
/// points in index order; a border point joins the first cluster that
/// reaches it. Everything else is `NOISE`.
pub fn cluster_dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Result<ClusterLabels, DetectError> {
    if !(eps > 0.0) || min_samples == 0 {
        return Err(DetectError::InvalidParams(format!(
            "eps must be > 0 and min_samples >= 1 (got eps={eps}, min_samples={min_samples})"
        )));
    }
    check_points(points)?;
    let n = points.len();
    let mut labels = vec![UNVISITED; n];
    if n == 0 {
        return Ok(ClusterLabels {
            labels: Vec::new(),
            algorithm: Algorithm::Dbscan,
        });
    }
    let index = SortedIndex::new(points);
    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbours = index.region(i, eps);
        if neighbours.len() < min_samples {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = neighbours.into();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let reach = index.region(q, eps);
            if reach.len() >= min_samples {
                queue.extend(reach);
            }
        }
        cluster += 1;
    }
    Ok(ClusterLabels {
        labels,
        algorithm: Algorithm::Dbscan,
    })
}

/// Sorted distances from every point to its `k`-th nearest other point.
pub fn k_distances(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| sq_dist(p, q))
                .collect();
            if d.is_empty() {
                return 0.0;
            }
            let kth = k.clamp(1, d.len()) - 1;
            d.select_nth_unstable_by(kth, f64::total_cmp);
            d[kth].sqrt()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Elbow of an ascending curve: the point farthest below the chord joining
/// its ends once both axes are scaled to `[0, 1]`.
pub fn knee(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n < 3 {
        return sorted.last().copied().unwrap_or(0.0);
    }
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if hi <= lo {
        return lo;
    }
    let best = (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            let y = (sorted[i] - lo) / (hi - lo);
            (i, x - y)
        })
        .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    sorted[best.0]
}

/// Rows with exact duplicates removed, first occurrence kept.
pub fn distinct_rows(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut seen = std::collections::HashSet::new();
    points
        .iter()
        .filter(|p| seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .cloned()
        .collect()
}

/// Default `eps`: the knee of the sorted (min_samples - 1)-NN distance curve
/// over distinct rows. Duplicates carry no distance scale and would pin the
/// knee to zero on lattice-valued counts.
pub fn default_eps(points: &[Vec<f64>], min_samples: usize) -> f64 {
    let d = k_distances(&distinct_rows(points), min_samples.saturating_sub(1).max(1));
    let eps = knee(&d);
    if eps > 0.0 {
        return eps;
    }
    d.iter().copied().find(|&v| v > 0.0).unwrap_or(1e-12)
}
