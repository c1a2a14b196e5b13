//! Ward agglomerative clustering and flat-kernel mean shift.

use serde::{Deserialize, Serialize};

use super::{check_points, robust, DetectError};

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    Agglomerative,
    MeanShift,
    Dbscan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// One label per row; `NOISE` marks density outliers.
    pub labels: Vec<i64>,
    pub algorithm: Algorithm,
}

impl ClusterLabels {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).max().map_or(0, |&m| m as usize + 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cluster_count()];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Renumbers arbitrary group keys to 0, 1, ... in order of first appearance.
pub(crate) fn relabel(keys: &[usize]) -> Vec<i64> {
    let mut map = std::collections::HashMap::new();
    keys.iter()
        .map(|k| {
            let next = map.len() as i64;
            *map.entry(*k).or_insert(next)
        })
        .collect()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// A point from each of the two merged clusters.
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

struct WardState {
    centroid: Vec<Vec<f64>>,
    size: Vec<usize>,
    active: Vec<bool>,
}

impl WardState {
    fn distance(&self, i: usize, j: usize) -> f64 {
        let (ni, nj) = (self.size[i] as f64, self.size[j] as f64);
        (2.0 * ni * nj / (ni + nj) * sq_dist(&self.centroid[i], &self.centroid[j])).sqrt()
    }

    /// Nearest active cluster to `i`; `prefer` wins ties so chains terminate.
    fn nearest(&self, i: usize, prefer: Option<usize>) -> usize {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..self.active.len() {
            if j == i || !self.active[j] {
                continue;
            }
            let d = self.distance(i, j);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        match prefer {
            Some(p) if self.distance(i, p) <= best_d => p,
            _ => best,
        }
    }
}

/// Full Ward dendrogram via the nearest-neighbour chain, merges sorted by
/// height. Heights are Ward distances `sqrt(2 n_a n_b / (n_a + n_b)) * |c_a - c_b|`.
pub fn ward_merges(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    let mut st = WardState {
        centroid: points.to_vec(),
        size: vec![1; n],
        active: vec![true; n],
    };
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    while merges.len() + 1 < n {
        if chain.is_empty() {
            chain.push(st.active.iter().position(|&a| a).expect("two clusters remain"));
        }
        loop {
            let top = *chain.last().expect("non-empty chain");
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            let nn = st.nearest(top, prev);
            if Some(nn) == prev {
                break;
            }
            chain.push(nn);
        }
        let b = chain.pop().expect("pair");
        let a = chain.pop().expect("pair");
        let height = st.distance(a, b);
        let (keep, gone) = (a.min(b), a.max(b));
        let (nk, ng) = (st.size[keep] as f64, st.size[gone] as f64);
        let merged: Vec<f64> = st.centroid[keep]
            .iter()
            .zip(&st.centroid[gone])
            .map(|(x, y)| (nk * x + ng * y) / (nk + ng))
            .collect();
        st.centroid[keep] = merged;
        st.size[keep] += st.size[gone];
        st.active[gone] = false;
        merges.push(Merge { a: keep, b: gone, height });
    }
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    merges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Partition obtained by applying the first `applied` merges.
pub fn cut(n: usize, merges: &[Merge], applied: usize) -> Vec<i64> {
    let mut parent: Vec<usize> = (0..n).collect();
    for m in &merges[..applied] {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    relabel(&roots)
}

/// Largest cluster count the cut may produce for `n` points.
pub fn max_cut_clusters(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(2)
}

/// Number of merges to apply. The cut sits in the widest gap between
/// consecutive merge heights on a log scale, among cuts leaving between 2 and
/// `max_cut_clusters(n)` clusters. Ties go to the cut with fewer clusters.
pub fn largest_gap_cut(merges: &[Merge]) -> usize {
    let n = merges.len() + 1;
    let lowest = n.saturating_sub(max_cut_clusters(n)).max(1);
    let mut best = n.saturating_sub(2);
    let mut best_gap = f64::NEG_INFINITY;
    for m in lowest..merges.len() {
        let (below, above) = (merges[m - 1].height, merges[m].height);
        let gap = if above <= 0.0 {
            0.0
        } else if below <= 0.0 {
            f64::INFINITY
        } else {
            above.ln() - below.ln()
        };
        if gap >= best_gap {
            best = m;
            best_gap = gap;
        }
    }
    best
}

pub fn cluster_agglomerative(points: &[Vec<f64>]) -> Result<ClusterLabels, DetectError> {
    if points.len() < 2 {
        return Err(DetectError::TooFewRows {
            needed: 2,
            got: points.len(),
        });
    }
    check_points(points)?;
    let merges = ward_merges(points);
    Ok(ClusterLabels {
        labels: cut(points.len(), &merges, largest_gap_cut(&merges)),
        algorithm: Algorithm::Agglomerative,
    })
}

pub const MEANSHIFT_MAX_ITER: usize = 300;
pub const MEANSHIFT_TOL: f64 = 1e-6;

/// Quantile of all pairwise distances.
pub fn pairwise_distance_quantile(points: &[Vec<f64>], q: f64) -> f64 {
    let n = points.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    robust::quantile_sorted(&d, q)
}

/// Flat-kernel mean shift seeded from every point. Converged modes closer
/// than half a bandwidth share a cluster.
pub fn cluster_meanshift(points: &[Vec<f64>], bandwidth: f64) -> Result<ClusterLabels, DetectError> {
    if points.len() < 2 {
        return Err(DetectError::TooFewRows {
            needed: 2,
            got: points.len(),
        });
    }
    check_points(points)?;
    if !(bandwidth > 0.0) {
        return Err(DetectError::ZeroBandwidth);
    }
    let bw2 = bandwidth * bandwidth;
    let dim = points[0].len();
    let modes: Vec<Vec<f64>> = points
        .iter()
        .map(|seed| {
            let mut x = seed.clone();
            for _ in 0..MEANSHIFT_MAX_ITER {
                let mut sum = vec![0.0; dim];
                let mut count = 0usize;
                for p in points {
                    if sq_dist(p, &x) <= bw2 {
                        sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
                        count += 1;
                    }
                }
                let next: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
                let shift = sq_dist(&next, &x).sqrt();
                x = next;
                if shift < MEANSHIFT_TOL {
                    break;
                }
            }
            x
        })
        .collect();

    let merge2 = (bandwidth / 2.0).powi(2);
    let mut centers: Vec<&Vec<f64>> = Vec::new();
    let keys: Vec<usize> = modes
        .iter()
        .map(|m| match centers.iter().position(|c| sq_dist(c, m) <= merge2) {
            Some(k) => k,
            None => {
                centers.push(m);
                centers.len() - 1
            }
        })
        .collect();
    Ok(ClusterLabels {
        labels: relabel(&keys),
        algorithm: Algorithm::MeanShift,
    })
}
