//! Deterministic rotate-then-slice corpus generator.
//!
//! A specimen footprint is rotated in the XY plane about its origin, walled,
//! and filled with straight lines on a lattice that stays fixed in the
//! machine frame, so the command statistics change with the rotation angle.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcode::{self, Code, Decimal, GcodeDocument, GcodeLine, Param};
use crate::geometry::{Point, Polygon};
use crate::seed;

pub const GENERATOR_VERSION: &str = concat!("gcode-sentinel-synth/", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";

/// Decimal places written on every E value.
pub const E_DECIMALS: usize = 5;

const BED_CENTER: Point = Point::new(110.0, 110.0);
const TRAVEL_FEED: u32 = 6000;
const WALL_FEED: u32 = 1200;
const INFILL_FEED: u32 = 1800;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("rotation angle {0} is outside [0, 360)")]
    InvalidAngle(f64),
    #[error("footprint area {area:.4} mm^2 is below one nozzle width squared")]
    DegenerateGeometry { area: f64 },
    #[error("invalid specimen: {0}")]
    InvalidSpec(String),
    #[error("count must be at least 1")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetId {
    D1,
    D2,
}

impl DatasetId {
    pub fn specimen(self) -> SpecimenSpec {
        match self {
            DatasetId::D1 => SpecimenSpec::tensile_bar(),
            DatasetId::D2 => SpecimenSpec::bracket(),
        }
    }

    /// Full-size file count and angular step.
    pub fn default_sweep(self) -> (usize, f64) {
        match self {
            DatasetId::D1 => (180, 1.0),
            DatasetId::D2 => (4320, 0.25),
        }
    }
}

impl std::fmt::Display for DatasetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetId::D1 => f.write_str("D1"),
            DatasetId::D2 => f.write_str("D2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenSpec {
    pub name: String,
    /// Outline in mm, centred on the rotation origin.
    pub footprint: Polygon,
    pub height: f64,
    pub layer_height: f64,
    pub nozzle_width: f64,
    pub infill_line_distance: f64,
    /// Fill direction per layer, cycled.
    pub infill_angles: Vec<f64>,
    pub wall_count: usize,
    pub skirt: bool,
    pub skirt_distance: f64,
    pub filament_diameter: f64,
}

impl SpecimenSpec {
    /// Dog-bone tensile bar with a grid-like fill at 2 mm spacing.
    pub fn tensile_bar() -> Self {
        SpecimenSpec {
            name: "tensile-bar".into(),
            footprint: dogbone(115.0, 19.0, 33.0, 6.0, 14.0, 8),
            height: 4.0,
            layer_height: 0.2,
            nozzle_width: 0.4,
            infill_line_distance: 2.0,
            infill_angles: vec![45.0, -45.0],
            wall_count: 2,
            skirt: true,
            skirt_distance: 3.0,
            filament_diameter: 1.75,
        }
    }

    /// L-shaped bracket with a three-direction fill at 4 mm spacing.
    pub fn bracket() -> Self {
        SpecimenSpec {
            name: "bracket".into(),
            footprint: l_bracket(80.0, 60.0, 20.0, 3.0, 8.0, 3),
            height: 4.0,
            layer_height: 0.2,
            nozzle_width: 0.4,
            infill_line_distance: 4.0,
            infill_angles: vec![45.0, -45.0, 90.0],
            wall_count: 2,
            skirt: true,
            skirt_distance: 3.0,
            filament_diameter: 1.75,
        }
    }

    pub fn layer_count(&self) -> usize {
        (self.height / self.layer_height).round() as usize
    }

    fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("height", self.height),
            ("layer_height", self.layer_height),
            ("nozzle_width", self.nozzle_width),
            ("infill_line_distance", self.infill_line_distance),
            ("filament_diameter", self.filament_diameter),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynthError::InvalidSpec(format!("{name} must be > 0")));
            }
        }
        if self.infill_angles.is_empty() {
            return Err(SynthError::InvalidSpec("no infill angles".into()));
        }
        if self.layer_count() == 0 {
            return Err(SynthError::InvalidSpec("height is below one layer".into()));
        }
        if !self.footprint.is_simple() {
            return Err(SynthError::InvalidSpec("footprint is not a simple polygon".into()));
        }
        let area = self.footprint.area();
        if area < self.nozzle_width * self.nozzle_width {
            return Err(SynthError::DegenerateGeometry { area });
        }
        Ok(())
    }

    /// Filament length that lays down one mm of track.
    fn e_per_mm(&self) -> f64 {
        let r = self.filament_diameter / 2.0;
        self.nozzle_width * self.layer_height / (std::f64::consts::PI * r * r)
    }
}

/// Replaces every vertex with a circular fillet of the given radius.
pub fn round_corners(sharp: &Polygon, radius: &[f64], segments: usize) -> Polygon {
    let n = sharp.len();
    let mut out = Vec::with_capacity(n * (segments + 1));
    for i in 0..n {
        let v = sharp.vertices[i];
        let r = radius[i];
        if r <= 0.0 || segments == 0 {
            out.push(v);
            continue;
        }
        let prev = sharp.vertices[(i + n - 1) % n];
        let next = sharp.vertices[(i + 1) % n];
        let unit = |p: Point| {
            let d = p.distance(v);
            Point::new((p.x - v.x) / d, (p.y - v.y) / d)
        };
        let (u1, u2) = (unit(prev), unit(next));
        let half = (u1.x * u2.x + u1.y * u2.y).clamp(-1.0, 1.0).acos() / 2.0;
        let tangent = r / half.tan();
        let bis = Point::new(u1.x + u2.x, u1.y + u2.y);
        let bl = bis.x.hypot(bis.y);
        let c = v.translated(bis.x / bl * r / half.sin(), bis.y / bl * r / half.sin());
        let a = v.translated(u1.x * tangent, u1.y * tangent);
        let b = v.translated(u2.x * tangent, u2.y * tangent);
        let start = (a.y - c.y).atan2(a.x - c.x);
        let mut sweep = (b.y - c.y).atan2(b.x - c.x) - start;
        if sweep > std::f64::consts::PI {
            sweep -= 2.0 * std::f64::consts::PI;
        } else if sweep < -std::f64::consts::PI {
            sweep += 2.0 * std::f64::consts::PI;
        }
        for k in 0..=segments {
            let t = start + sweep * k as f64 / segments as f64;
            out.push(Point::new(c.x + r * t.cos(), c.y + r * t.sin()));
        }
    }
    Polygon::new(out)
}

/// Tensile-bar outline: wide grips joined to a narrow gauge section through
/// filleted tapers. Centred on the origin, long axis along X.
pub fn dogbone(
    length: f64,
    grip_width: f64,
    gauge_length: f64,
    gauge_width: f64,
    fillet_radius: f64,
    arc_segments: usize,
) -> Polygon {
    let (hl, hw, hg, hn) = (length / 2.0, grip_width / 2.0, gauge_length / 2.0, gauge_width / 2.0);
    // taper length that a fillet of this radius would need for the step
    let rise = hw - hn;
    let taper = (fillet_radius * fillet_radius - (fillet_radius - rise).powi(2)).max(0.0).sqrt() + rise;
    let ge = hg + taper;
    let sharp = Polygon::new(vec![
        Point::new(-hl, -hw),
        Point::new(-ge, -hw),
        Point::new(-hg, -hn),
        Point::new(hg, -hn),
        Point::new(ge, -hw),
        Point::new(hl, -hw),
        Point::new(hl, hw),
        Point::new(ge, hw),
        Point::new(hg, hn),
        Point::new(-hg, hn),
        Point::new(-ge, hw),
        Point::new(-hl, hw),
    ]);
    let r = fillet_radius;
    let radius = [0.0, r, r, r, r, 0.0, 0.0, r, r, r, r, 0.0];
    round_corners(&sharp, &radius, arc_segments).to_ccw()
}

/// L-shaped bracket outline with rounded corners, centred on its centroid.
pub fn l_bracket(
    leg_x: f64,
    leg_y: f64,
    thickness: f64,
    corner_radius: f64,
    fillet_radius: f64,
    arc_segments: usize,
) -> Polygon {
    let sharp = Polygon::new(vec![
        Point::new(0.0, 0.0),
        Point::new(leg_x, 0.0),
        Point::new(leg_x, thickness),
        Point::new(thickness, thickness),
        Point::new(thickness, leg_y),
        Point::new(0.0, leg_y),
    ]);
    let c = corner_radius;
    let radius = [c, c, c, fillet_radius, c, c];
    let rounded = round_corners(&sharp, &radius, arc_segments);
    let (cx, cy) = centroid(&rounded);
    rounded.translated(-cx, -cy).to_ccw()
}

fn centroid(p: &Polygon) -> (f64, f64) {
    let a = p.signed_area();
    let (mut cx, mut cy) = (0.0, 0.0);
    for (u, v) in p.edges() {
        let w = u.x * v.y - v.x * u.y;
        cx += (u.x + v.x) * w;
        cy += (u.y + v.y) * w;
    }
    (cx / (6.0 * a), cy / (6.0 * a))
}

fn coord(v: f64) -> Decimal {
    let mut s = format!("{v:.3}");
    if s.contains('.') {
        s.truncate(s.trim_end_matches('0').trim_end_matches('.').len());
    }
    if s == "-0" {
        s = "0".into();
    }
    Decimal::parse(&s).expect("formatted coordinate parses")
}

fn int(v: u32) -> Decimal {
    Decimal::parse(&v.to_string()).expect("integer parses")
}

fn cmd(code: Code, params: Vec<Param>) -> GcodeLine {
    GcodeLine::command(code, params, None)
}

struct Emitter {
    lines: Vec<GcodeLine>,
    e: f64,
    e_per_mm: f64,
    at: Point,
}

impl Emitter {
    fn push(&mut self, line: GcodeLine) {
        self.lines.push(line);
    }

    fn comment(&mut self, text: &str) {
        self.lines.push(GcodeLine::comment_line(text));
    }

    fn travel(&mut self, to: Point, z: Option<f64>) {
        let mut params = vec![Param::new('F', int(TRAVEL_FEED)), Param::new('X', coord(to.x)), Param::new('Y', coord(to.y))];
        if let Some(z) = z {
            params.push(Param::new('Z', coord(z)));
        }
        self.push(cmd(Code::G0, params));
        self.at = to;
    }

    fn extrude(&mut self, to: Point, feed: Option<u32>) {
        self.e += self.at.distance(to) * self.e_per_mm;
        let mut params = Vec::with_capacity(4);
        if let Some(f) = feed {
            params.push(Param::new('F', int(f)));
        }
        params.push(Param::new('X', coord(to.x)));
        params.push(Param::new('Y', coord(to.y)));
        params.push(Param::new('E', Decimal::fixed(self.e, E_DECIMALS)));
        self.push(cmd(Code::G1, params));
        self.at = to;
    }

    fn closed_loop(&mut self, poly: &Polygon, start: usize, z: Option<f64>) {
        let n = poly.len();
        self.travel(poly.vertices[start], z);
        for k in 1..=n {
            let feed = (k == 1).then_some(WALL_FEED);
            self.extrude(poly.vertices[(start + k) % n], feed);
        }
    }
}

/// Slices `spec` rotated by `angle` degrees. The seed only moves wall seams,
/// so command counts depend on geometry alone.
pub fn build_specimen(spec: &SpecimenSpec, angle: f64, seed: u64) -> Result<GcodeDocument, SynthError> {
    if !(0.0..360.0).contains(&angle) {
        return Err(SynthError::InvalidAngle(angle));
    }
    spec.validate()?;
    let mut rng = seed::rng(seed);

    let part = spec.footprint.clone().to_ccw().rotated(angle);
    let walls: Vec<Polygon> = (0..spec.wall_count)
        .map(|w| {
            part.offset_inward((w as f64 + 0.5) * spec.nozzle_width)
                .translated(BED_CENTER.x, BED_CENTER.y)
        })
        .collect();
    let fill_region = part
        .offset_inward(spec.wall_count as f64 * spec.nozzle_width)
        .translated(BED_CENTER.x, BED_CENTER.y);
    let fill_layers: Vec<Vec<(Point, Point)>> = spec
        .infill_angles
        .iter()
        .map(|&a| fill_path(&fill_region, a, spec.infill_line_distance, spec.nozzle_width))
        .collect();
    let skirt = spec.skirt.then(|| {
        let (lo, hi) = part.bounding_box();
        let d = spec.skirt_distance;
        Polygon::new(vec![
            Point::new(lo.x - d, lo.y - d),
            Point::new(hi.x + d, lo.y - d),
            Point::new(hi.x + d, hi.y + d),
            Point::new(lo.x - d, hi.y + d),
        ])
        .translated(BED_CENTER.x, BED_CENTER.y)
    });

    let layers = spec.layer_count();
    let mut out = Emitter {
        lines: Vec::new(),
        e: 0.0,
        e_per_mm: spec.e_per_mm(),
        at: Point::new(0.0, 0.0),
    };
    out.comment("FLAVOR:Marlin");
    out.comment(&format!("Generated with {GENERATOR_VERSION}"));
    out.comment(&format!("SPECIMEN:{}", spec.name));
    out.comment(&format!("ROTATION:{angle}"));
    out.comment(&format!("LAYER_COUNT:{layers}"));
    out.push(cmd(Code::new('M', 140), vec![Param::new('S', int(60))]));
    out.push(cmd(Code::new('M', 105), vec![]));
    out.push(cmd(Code::new('M', 190), vec![Param::new('S', int(60))]));
    out.push(cmd(Code::new('M', 104), vec![Param::new('S', int(200))]));
    out.push(cmd(Code::new('M', 105), vec![]));
    out.push(cmd(Code::new('M', 109), vec![Param::new('S', int(200))]));
    out.push(GcodeLine::command(Code::M82, vec![], Some("absolute extrusion mode".into())));
    out.push(GcodeLine::command(Code::new('G', 28), vec![], Some("Home".into())));
    out.push(cmd(Code::G92, vec![Param::new('E', int(0))]));
    out.push(cmd(Code::new('M', 107), vec![]));

    for layer in 0..layers {
        let z = (layer + 1) as f64 * spec.layer_height;
        out.comment(&format!("LAYER:{layer}"));
        if layer == 1 {
            out.push(cmd(Code::new('M', 106), vec![Param::new('S', int(255))]));
        }
        let mut z_pending = Some(z);
        if let (0, Some(skirt)) = (layer, &skirt) {
            out.comment("TYPE:SKIRT");
            out.closed_loop(skirt, 0, z_pending.take());
        }
        for (w, wall) in walls.iter().enumerate() {
            out.comment(if w == 0 { "TYPE:WALL-OUTER" } else { "TYPE:WALL-INNER" });
            let seam = rng.gen_range(0..wall.len());
            out.closed_loop(wall, seam, z_pending.take());
        }
        out.comment("TYPE:FILL");
        let path = &fill_layers[layer % fill_layers.len()];
        for (i, &(a, b)) in path.iter().enumerate() {
            out.travel(a, z_pending.take());
            out.extrude(b, (i == 0).then_some(INFILL_FEED));
        }
    }

    out.push(cmd(Code::new('M', 140), vec![Param::new('S', int(0))]));
    out.push(cmd(Code::new('M', 107), vec![]));
    out.push(cmd(Code::new('M', 104), vec![Param::new('S', int(0))]));
    out.push(cmd(Code::new('G', 28), vec![Param::new('X', int(0)), Param::new('Y', int(0))]));
    out.push(cmd(Code::new('M', 84), vec![]));
    out.comment("End of Gcode");

    Ok(GcodeDocument::from_lines(out.lines).expect("generated layers are ordered"))
}

/// Fill segments in print order: scanlines in sequence, alternating direction.
fn fill_path(region: &Polygon, angle: f64, spacing: f64, min_len: f64) -> Vec<(Point, Point)> {
    let mut path = Vec::new();
    for (row_index, row) in region.scanline_segments(angle, spacing).into_iter().enumerate() {
        let row = row.into_iter().filter(|(a, b)| a.distance(*b) >= min_len);
        if row_index % 2 == 0 {
            path.extend(row);
        } else {
            let mut rev: Vec<_> = row.map(|(a, b)| (b, a)).collect();
            rev.reverse();
            path.extend(rev);
        }
    }
    path
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub angle_deg: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: DatasetId,
    pub generator_version: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let bytes = fs::read(path).map_err(|source| io_err(path, source))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fs::write(path, json).map_err(|source| io_err(path, source))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.path.as_str())
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Rotation angles for a sweep. When `count * step` passes 360 degrees the
/// sweep wraps with a fractional phase so angles stay unique.
pub fn sweep_angles(count: usize, step: f64) -> Vec<f64> {
    let per_pass = ((360.0 / step) - 1e-9).ceil().max(1.0) as usize;
    let passes = count.div_ceil(per_pass).max(1);
    (0..count)
        .map(|i| {
            let (pass, j) = (i / per_pass, i % per_pass);
            j as f64 * step + pass as f64 * step / passes as f64
        })
        .collect()
}

/// Deterministically builds one plan of files, without touching disk.
pub fn plan_dataset(dataset_id: DatasetId, count: usize, angular_step: f64, seed: u64) -> Result<DatasetManifest, SynthError> {
    if count == 0 {
        return Err(SynthError::EmptyDataset);
    }
    if !(angular_step > 0.0 && angular_step.is_finite()) {
        return Err(SynthError::InvalidSpec("angular step must be > 0".into()));
    }
    let entries = sweep_angles(count, angular_step)
        .into_iter()
        .enumerate()
        .map(|(i, angle_deg)| ManifestEntry {
            path: format!("{dataset_id}_{i:04}.gcode"),
            angle_deg,
            seed: seed::derive_seed(seed, &format!("specimen/{i}")),
        })
        .collect();
    Ok(DatasetManifest {
        dataset_id,
        generator_version: GENERATOR_VERSION.to_string(),
        entries,
    })
}

/// Writes `count` files and their manifest into `out_dir`.
pub fn generate_dataset(
    dataset_id: DatasetId,
    spec: &SpecimenSpec,
    count: usize,
    angular_step: f64,
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetManifest, SynthError> {
    let manifest = plan_dataset(dataset_id, count, angular_step, seed)?;
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    manifest.entries.par_iter().try_for_each(|entry| {
        let doc = build_specimen(spec, entry.angle_deg, entry.seed)?;
        let path = out_dir.join(&entry.path);
        fs::write(&path, gcode::serialize(&doc)).map_err(|e| io_err(&path, e))
    })?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
