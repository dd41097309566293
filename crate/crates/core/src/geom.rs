//! Planar geometry shared by the simulator, the reward and the renderer.

use std::f64::consts::PI;

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

pub type Point = [f64; 2];

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Rigid 2D transform (rotation then translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        Self {
            x,
            y,
            theta,
            cos,
            sin,
        }
    }

    /// Local coordinates to world coordinates.
    #[inline]
    pub fn to_world(&self, lx: f64, ly: f64) -> Point {
        [
            self.x + lx * self.cos - ly * self.sin,
            self.y + lx * self.sin + ly * self.cos,
        ]
    }

    /// World coordinates to local coordinates.
    #[inline]
    pub fn to_local(&self, wx: f64, wy: f64) -> Point {
        let dx = wx - self.x;
        let dy = wy - self.y;
        [dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos]
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Segment index the point projects onto.
    pub segment: usize,
    /// Arc length of the foot point (may fall outside [0, length] at the ends).
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub lateral: f64,
    /// Heading of the segment.
    pub heading: f64,
}

/// Directed polyline with cached arc lengths and segment headings.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
    cum: Vec<f64>,
    headings: Vec<f64>,
}

impl Polyline {
    /// Panics if fewer than two points are given; callers validate first.
    pub fn new(points: Vec<Point>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least two points");
        let mut cum = Vec::with_capacity(points.len());
        let mut headings = Vec::with_capacity(points.len() - 1);
        cum.push(0.0);
        for w in points.windows(2) {
            let d = dist(w[0], w[1]);
            cum.push(cum.last().unwrap() + d);
            headings.push((w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]));
        }
        Self {
            points,
            cum,
            headings,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn segment_count(&self) -> usize {
        self.headings.len()
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        *self.points.last().unwrap()
    }

    pub fn start_heading(&self) -> f64 {
        self.headings[0]
    }

    pub fn end_heading(&self) -> f64 {
        *self.headings.last().unwrap()
    }

    /// Point and heading at arc length `s` (clamped to the polyline).
    pub fn at(&self, s: f64) -> (Point, f64) {
        let s = s.clamp(0.0, self.length());
        let seg = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => (i - 1).min(self.segment_count() - 1),
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = self.cum[seg + 1] - self.cum[seg];
        let t = if len > 0.0 { (s - self.cum[seg]) / len } else { 0.0 };
        (
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
            self.headings[seg],
        )
    }

    /// Nearest-segment projection. Beyond the first and last vertex the end
    /// segments are extended as rays, so `s` can be negative or exceed the length.
    pub fn project(&self, p: Point) -> Projection {
        let n = self.segment_count();
        let mut best = Projection {
            segment: 0,
            s: 0.0,
            lateral: 0.0,
            heading: 0.0,
        };
        let mut best_d2 = f64::INFINITY;
        for seg in 0..n {
            let a = self.points[seg];
            let b = self.points[seg + 1];
            let ex = b[0] - a[0];
            let ey = b[1] - a[1];
            let len2 = ex * ex + ey * ey;
            if len2 <= 0.0 {
                continue;
            }
            let len = len2.sqrt();
            let px = p[0] - a[0];
            let py = p[1] - a[1];
            let mut t = (px * ex + py * ey) / len2;
            let lo = if seg == 0 { f64::NEG_INFINITY } else { 0.0 };
            let hi = if seg + 1 == n { f64::INFINITY } else { 1.0 };
            t = t.clamp(lo, hi);
            let fx = a[0] + t * ex - p[0];
            let fy = a[1] + t * ey - p[1];
            let d2 = fx * fx + fy * fy;
            if d2 < best_d2 {
                best_d2 = d2;
                let lateral = (ex * py - ey * px) / len;
                best = Projection {
                    segment: seg,
                    s: self.cum[seg] + t * len,
                    lateral,
                    heading: self.headings[seg],
                };
            }
        }
        best
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.points {
            lo[0] = lo[0].min(p[0]);
            lo[1] = lo[1].min(p[1]);
            hi[0] = hi[0].max(p[0]);
            hi[1] = hi[1].max(p[1]);
        }
        (lo, hi)
    }
}

/// Oriented rectangle given by center, heading and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    fn axes(&self) -> [Point; 2] {
        let (s, c) = self.theta.sin_cos();
        [[c, s], [-s, c]]
    }

    fn radius_along(&self, axis: Point) -> f64 {
        let [u, v] = self.axes();
        self.half_length * (u[0] * axis[0] + u[1] * axis[1]).abs()
            + self.half_width * (v[0] * axis[0] + v[1] * axis[1]).abs()
    }

    pub fn contains(&self, p: Point) -> bool {
        let [u, v] = self.axes();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        (dx * u[0] + dy * u[1]).abs() <= self.half_length
            && (dx * v[0] + dy * v[1]).abs() <= self.half_width
    }

    /// Separating-axis penetration depth; 0 when the boxes do not overlap.
    pub fn overlap_depth(&self, other: &Obb) -> f64 {
        let d = [other.x - self.x, other.y - self.y];
        let mut depth = f64::INFINITY;
        for axis in self.axes().into_iter().chain(other.axes()) {
            let sep = (d[0] * axis[0] + d[1] * axis[1]).abs();
            let overlap = self.radius_along(axis) + other.radius_along(axis) - sep;
            if overlap <= 0.0 {
                return 0.0;
            }
            depth = depth.min(overlap);
        }
        depth
    }
}

/// Triangular kernel: 1 at 0, falling linearly to 0 at `tolerance`.
#[inline]
pub fn triangular(x: f64, tolerance: f64) -> f64 {
    (1.0 - x.abs() / tolerance).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn projection_sign_convention_is_left_positive() {
        let line = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0]]);
        let p = line.project([3.0, 1.0]);
        assert!((p.lateral - 1.0).abs() < 1e-12);
        assert!((p.s - 3.0).abs() < 1e-12);
        let q = line.project([3.0, -2.0]);
        assert!((q.lateral + 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_extends_end_segments() {
        let line = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]);
        let p = line.project([-2.0, 0.5]);
        assert!((p.s + 2.0).abs() < 1e-12);
        let q = line.project([9.0, 13.0]);
        assert!((q.s - 23.0).abs() < 1e-12);
        assert!((q.lateral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frame_round_trip() {
        let f = Frame::new(3.0, -1.0, 0.7);
        let w = f.to_world(1.5, -2.0);
        let l = f.to_local(w[0], w[1]);
        assert!((l[0] - 1.5).abs() < 1e-12 && (l[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn obb_overlap_depth() {
        let a = Obb {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            half_length: 2.0,
            half_width: 1.0,
        };
        let mut b = a;
        b.x = 3.9;
        assert!((a.overlap_depth(&b) - 0.1).abs() < 1e-12);
        b.x = 4.1;
        assert_eq!(a.overlap_depth(&b), 0.0);
    }
}
