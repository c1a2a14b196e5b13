//! Planar polygon helpers used by the toolpath generator.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn rotated(self, degrees: f64) -> Point {
        let (s, c) = degrees.to_radians().sin_cos();
        Point::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    pub fn translated(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Polygon { vertices }
    }

    pub fn rectangle(width: f64, height: f64) -> Self {
        let (w, h) = (width / 2.0, height / 2.0);
        Polygon::new(vec![
            Point::new(-w, -h),
            Point::new(w, -h),
            Point::new(w, h),
            Point::new(-w, h),
        ])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise winding.
    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>() / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.distance(b)).sum()
    }

    pub fn to_ccw(mut self) -> Self {
        if self.signed_area() < 0.0 {
            self.vertices.reverse();
        }
        self
    }

    pub fn rotated(&self, degrees: f64) -> Polygon {
        Polygon::new(self.vertices.iter().map(|p| p.rotated(degrees)).collect())
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon::new(self.vertices.iter().map(|p| p.translated(dx, dy)).collect())
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// True when no two non-adjacent edges touch.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<(Point, Point)> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if !adjacent && segments_intersect(edges[i], edges[j]) {
                    return false;
                }
            }
        }
        true
    }

    /// Moves every edge `distance` towards the interior of a counter-clockwise
    /// polygon, joining neighbours at their line intersection. Only valid for
    /// distances small against the polygon's features.
    pub fn offset_inward(&self, distance: f64) -> Polygon {
        let n = self.vertices.len();
        let lines: Vec<(Point, Point)> = self
            .edges()
            .map(|(a, b)| {
                let len = a.distance(b);
                let (nx, ny) = (-(b.y - a.y) / len, (b.x - a.x) / len);
                (
                    a.translated(nx * distance, ny * distance),
                    b.translated(nx * distance, ny * distance),
                )
            })
            .collect();
        let vertices = (0..n)
            .map(|i| {
                let prev = lines[(i + n - 1) % n];
                let cur = lines[i];
                line_intersection(prev, cur).unwrap_or(cur.0)
            })
            .collect();
        Polygon::new(vertices)
    }

    /// Straight fill lines with direction `degrees`, spaced `spacing` apart on
    /// a lattice anchored at the coordinate origin, clipped to the interior
    /// (even-odd rule). Scanlines are ordered across the lattice and segments
    /// along each scanline.
    pub fn scanline_segments(&self, degrees: f64, spacing: f64) -> Vec<Vec<(Point, Point)>> {
        let local = self.rotated(-degrees);
        let (lo, hi) = local.bounding_box();
        let first = (lo.y / spacing).ceil() as i64;
        let last = (hi.y / spacing).floor() as i64;
        let mut rows = Vec::new();
        for k in first..=last {
            let y = k as f64 * spacing;
            let mut xs: Vec<f64> = local
                .edges()
                .filter(|(a, b)| (a.y <= y && y < b.y) || (b.y <= y && y < a.y))
                .map(|(a, b)| a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y))
                .collect();
            xs.sort_by(f64::total_cmp);
            let row: Vec<(Point, Point)> = xs
                .chunks_exact(2)
                .map(|pair| {
                    (
                        Point::new(pair[0], y).rotated(degrees),
                        Point::new(pair[1], y).rotated(degrees),
                    )
                })
                .collect();
            if !row.is_empty() {
                rows.push(row);
            }
        }
        rows
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect((p1, p2): (Point, Point), (q1, q2): (Point, Point)) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Point, b: Point, p: Point, d: f64| {
        d == 0.0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

fn line_intersection((a1, a2): (Point, Point), (b1, b2): (Point, Point)) -> Option<Point> {
    let d = (a2.x - a1.x) * (b2.y - b1.y) - (a2.y - a1.y) * (b2.x - b1.x);
    if d.abs() < 1e-12 {
        return None;
    }
    let t = ((b1.x - a1.x) * (b2.y - b1.y) - (b1.y - a1.y) * (b2.x - b1.x)) / d;
    Some(Point::new(a1.x + t * (a2.x - a1.x), a1.y + t * (a2.y - a1.y)))
}

/// Points along a circular arc, excluding the start point and including the end.
pub fn arc(center: Point, radius: f64, from_deg: f64, to_deg: f64, segments: usize) -> Vec<Point> {
    (1..=segments)
        .map(|i| {
            let t = from_deg + (to_deg - from_deg) * i as f64 / segments as f64;
            let (s, c) = t.to_radians().sin_cos();
            Point::new(center.x + radius * c, center.y + radius * s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_area_and_winding() {
        let r = Polygon::rectangle(100.0, 20.0);
        assert_eq!(r.signed_area(), 2000.0);
        assert!(r.is_simple());
        let cw = Polygon::new(r.vertices.iter().rev().copied().collect());
        assert!(cw.signed_area() < 0.0);
        assert_eq!(cw.to_ccw().signed_area(), 2000.0);
    }

    #[test]
    fn bowtie_is_not_simple() {
        let p = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]);
        assert!(!p.is_simple());
    }

    #[test]
    fn inward_offset_of_rectangle() {
        let r = Polygon::rectangle(10.0, 4.0).offset_inward(0.5);
        assert!((r.area() - 9.0 * 3.0).abs() < 1e-9);
    }

    #[test]
    fn horizontal_scanlines_cover_rectangle() {
        let r = Polygon::rectangle(10.0, 4.0);
        let rows = r.scanline_segments(0.0, 1.0);
        // y = -2 (inclusive lower edge) through y = 1; y = 2 is on the open upper edge
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert_eq!(row.len(), 1);
            assert!((row[0].0.distance(row[0].1) - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn concave_shape_splits_scanlines() {
        // U shape opening upward
        let u = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(30.0, 0.0),
            Point::new(30.0, 30.0),
            Point::new(20.0, 30.0),
            Point::new(20.0, 10.0),
            Point::new(10.0, 10.0),
            Point::new(10.0, 30.0),
            Point::new(0.0, 30.0),
        ]);
        let rows = u.scanline_segments(0.0, 5.0);
        let per_row: Vec<usize> = rows.iter().map(Vec::len).collect();
        assert_eq!(per_row, vec![1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn arc_endpoints() {
        let pts = arc(Point::new(0.0, 0.0), 2.0, 0.0, 90.0, 4);
        assert_eq!(pts.len(), 4);
        assert!(pts[3].distance(Point::new(0.0, 2.0)) < 1e-12);
    }
}
