#![allow(dead_code)]

use gcode_sentinel::detect::{ClusterLabels, NOISE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Standard normal draw via Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Two isotropic 2-D blobs of `per_blob` points, unit spread, centres
/// `separation` apart. Returns points and the true blob of each.
pub fn two_blobs(rng: &mut ChaCha8Rng, per_blob: usize, separation: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for i in 0..2 * per_blob {
        let blob = i % 2;
        let cx = blob as f64 * separation;
        pts.push(vec![cx + normal(rng), normal(rng)]);
        truth.push(blob);
    }
    (pts, truth)
}

/// True when `labels` induce exactly the partition `truth`.
pub fn same_partition(labels: &ClusterLabels, truth: &[usize]) -> bool {
    let l = &labels.labels;
    (0..l.len()).all(|i| (0..l.len()).all(|j| (l[i] == l[j]) == (truth[i] == truth[j])))
}

/// One toolpath step in a random layered program.
#[derive(Debug, Clone)]
pub enum Step {
    Travel(f64, f64),
    /// Target XY and E amount in units of 1e-5 mm.
    Extrude(f64, f64, u64),
    DryG1(f64, f64),
    /// Retract then unretract by this many 1e-5 mm units.
    Retract(u64),
    Comment,
    Fan(u32),
}

/// Renders layers of steps as an absolute-extrusion program with layer
/// markers. Every layer ends with an extruding move so deletions inside a
/// layer are always followed by another E target.
pub fn render_program(layers: &[Vec<Step>], decimals: usize) -> String {
    let mut out = String::from(";generated\nM82\nM104 S200\nG28\nG92 E0\n");
    let mut units = 0u64;
    let mm = |u: u64| u as f64 * 1e-5;
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    for (n, steps) in layers.iter().enumerate() {
        line(format!(";LAYER:{n}"));
        line(format!("G0 Z{:.2}", 0.2 * (n + 1) as f64));
        for s in steps.iter().chain(std::iter::once(&Step::Extrude(1.0, 1.0, 50_000))) {
            match *s {
                Step::Travel(x, y) => line(format!("G0 F3000 X{x:.3} Y{y:.3}")),
                Step::Extrude(x, y, d) => {
                    units += d;
                    line(format!("G1 X{x:.3} Y{y:.3} E{:.decimals$}", mm(units)));
                }
                Step::DryG1(x, y) => line(format!("G1 X{x:.3} Y{y:.3}")),
                Step::Retract(d) => {
                    line(format!("G1 F2400 E{:.decimals$}", mm(units.saturating_sub(d))));
                    line(format!("G1 F2400 E{:.decimals$}", mm(units)));
                }
                Step::Comment => line(";TYPE:FILL".to_string()),
                Step::Fan(s) => line(format!("M106 S{s}")),
            }
        }
    }
    out.push_str("M107\nM84");
    out
}

pub mod strategies {
    use super::Step;
    use proptest::prelude::*;

    pub fn step() -> impl Strategy<Value = Step> {
        let xy = || 0.0f64..200.0;
        prop_oneof![
            2 => (xy(), xy()).prop_map(|(x, y)| Step::Travel(x, y)),
            8 => (xy(), xy(), 100u64..300_000).prop_map(|(x, y, d)| Step::Extrude(x, y, d)),
            1 => (xy(), xy()).prop_map(|(x, y)| Step::DryG1(x, y)),
            1 => (10_000u64..200_000).prop_map(Step::Retract),
            1 => Just(Step::Comment),
            1 => (0u32..256).prop_map(Step::Fan),
        ]
    }

    pub fn layers() -> impl Strategy<Value = Vec<Vec<Step>>> {
        prop::collection::vec(prop::collection::vec(step(), 0..25), 2..14)
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn find(p: &mut Vec<usize>, x: usize) -> usize {
    if p[x] != x {
        let r = find(p, p[x]);
        p[x] = r;
    }
    p[x]
}

/// Brute-force DBSCAN: core components by union-find; clusters numbered by
/// their smallest core index; a border point joins the lowest-numbered
/// adjacent cluster.
pub fn naive_dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Vec<i64> {
    let n = points.len();
    let near = |i: usize, j: usize| dist(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_samples).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut number = std::collections::HashMap::new();
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let next = number.len() as i64;
            number.entry(r).or_insert(next);
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                number[&find(&mut parent, i)]
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| number[&find(&mut parent, j)])
                    .min()
                    .unwrap_or(NOISE)
            }
        })
        .collect()
}

/// Dominant eigenpair of a symmetric matrix by power iteration.
pub fn power_iteration(m: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let d = m.len();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * 0.01).collect();
    let mut lambda = 0.0;
    for _ in 0..20000 {
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| m[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        lambda = norm;
        if delta < 1e-15 {
            break;
        }
    }
    (lambda, v)
}

pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n)
                .collect()
        })
        .collect()
}


/// Clumpy random points so that core, border, and noise all occur.
pub fn random_instance(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut r = gcode_sentinel::seed::rng(seed);
    let centres: Vec<(f64, f64)> = (0..4).map(|_| (r.gen_range(0.0..10.0), r.gen_range(0.0..10.0))).collect();
    (0..n)
        .map(|_| {
            if r.gen_bool(0.15) {
                vec![r.gen_range(0.0..10.0), r.gen_range(0.0..10.0)]
            } else {
                let (cx, cy) = centres[r.gen_range(0..4)];
                vec![cx + 0.6 * normal(&mut r), cy + 0.6 * normal(&mut r)]
            }
        })
        .collect()
}

/// 200 rows in 11-space with planted, well-separated variances under a
/// random linear mixing.
pub fn planted_rows(seed: u64) -> Vec<Vec<f64>> {
    let mut r = gcode_sentinel::seed::rng(seed);
    let scales = [6.0, 3.0, 1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
    let mixing: Vec<Vec<f64>> = (0..11).map(|_| (0..11).map(|_| normal(&mut r)).collect()).collect();
    (0..200)
        .map(|_| {
            let z: Vec<f64> = scales.iter().map(|s| s * normal(&mut r)).collect();
            (0..11).map(|i| (0..11).map(|j| mixing[i][j] * z[j]).sum()).collect()
        })
        .collect()
}
