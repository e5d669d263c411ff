//! Planar geometry: angles, poses, oriented boxes, polygons.
//!
//! Everything here works in a global Cartesian frame measured in meters, with
//! headings in radians measured counter-clockwise from +x. Lateral quantities
//! are positive to the left of a heading.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Absolute angular distance in `[0, π]`.
pub fn angle_diff_abs(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `heading`.
    pub fn from_heading(heading: f64) -> Self {
        Self::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotates counter-clockwise by `angle`.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Vec2, s: f64) -> Self {
        Self::new(self.x + (o.x - self.x) * s, self.y + (o.y - self.y) * s)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

/// A planar pose. The heading is always kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn with_position(&self, p: Vec2) -> Self {
        Self {
            x: p.x,
            y: p.y,
            heading: self.heading,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    /// Expresses `point` in this pose's frame as `(longitudinal, lateral)`.
    pub fn to_local(&self, point: Vec2) -> (f64, f64) {
        let d = point - self.position();
        let (s, c) = self.heading.sin_cos();
        (d.x * c + d.y * s, -d.x * s + d.y * c)
    }

    /// Inverse of [`Pose2D::to_local`].
    pub fn to_global(&self, longitudinal: f64, lateral: f64) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        Vec2::new(
            self.x + longitudinal * c - lateral * s,
            self.y + longitudinal * s + lateral * c,
        )
    }
}

/// Rectangle centred on a pose, aligned with its heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2D,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2D, half_length: f64, half_width: f64) -> Self {
        Self {
            center,
            half_length,
            half_width,
        }
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let c = &self.center;
        [
            c.to_global(self.half_length, self.half_width),
            c.to_global(-self.half_length, self.half_width),
            c.to_global(-self.half_length, -self.half_width),
            c.to_global(self.half_length, -self.half_width),
        ]
    }

    fn axes(&self) -> [Vec2; 2] {
        let f = Vec2::from_heading(self.center.heading());
        [f, f.perp()]
    }

    /// Separating-axis overlap test. Touching boxes count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let a = self.corners();
        let b = other.corners();
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (amin, amax) = project(&a, axis);
            let (bmin, bmax) = project(&b, axis);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }

    /// Centroid of the intersection region, if the boxes overlap with
    /// positive area.
    pub fn intersection_centroid(&self, other: &OrientedBox) -> Option<Vec2> {
        let clipped = clip_convex(&self.corners(), &other.corners());
        polygon_centroid(&clipped)
    }

    pub fn translated(&self, offset: Vec2) -> Self {
        Self {
            center: self.center.with_position(self.center.position() + offset),
            ..*self
        }
    }
}

fn project(points: &[Vec2], axis: Vec2) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for p in points {
        let d = p.dot(axis);
        min = min.min(d);
        max = max.max(d);
    }
    (min, max)
}

/// Sutherland–Hodgman clip of convex `subject` by convex counter-clockwise `clip`.
fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b - a;
        let inside = |p: Vec2| edge.cross(p - a) >= 0.0;
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = inside(cur);
            let prev_in = inside(prev);
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn segment_line_intersection(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let edge = b - a;
    let dp = edge.cross(p - a);
    let dq = edge.cross(q - a);
    let denom = dp - dq;
    if denom.abs() < f64::EPSILON {
        return p;
    }
    p.lerp(q, dp / denom)
}

fn polygon_centroid(points: &[Vec2]) -> Option<Vec2> {
    if points.len() < 3 {
        return None;
    }
    let mut area2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..points.len() {
        let p = points[i];
        let q = points[(i + 1) % points.len()];
        let c = p.cross(q);
        area2 += c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    if area2.abs() < 1e-12 {
        // degenerate (touching) contact: fall back to the vertex mean
        let n = points.len() as f64;
        let s = points.iter().fold(Vec2::ZERO, |acc, p| acc + *p);
        return Some(s * (1.0 / n));
    }
    Some(Vec2::new(cx / (3.0 * area2), cy / (3.0 * area2)))
}

/// Closest distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (_, d) = project_onto_segment(p, a, b);
    d
}

/// Returns the clamped segment parameter in `[0, 1]` and the distance.
pub fn project_onto_segment(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let s = if len2 <= 0.0 {
        0.0
    } else {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    };
    (s, p.distance(a + ab * s))
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    // disjoint boxes first: collinear far-apart segments give noisy crosses
    if p1.x.max(p2.x) < q1.x.min(q2.x)
        || q1.x.max(q2.x) < p1.x.min(p2.x)
        || p1.y.max(p2.y) < q1.y.min(q2.y)
        || q1.y.max(q2.y) < p1.y.min(p2.y)
    {
        return false;
    }
    let d1 = (q2 - q1).cross(p1 - q1);
    let d2 = (q2 - q1).cross(p2 - q1);
    let d3 = (p2 - p1).cross(q1 - p1);
    let d4 = (p2 - p1).cross(q2 - p1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Vec2, b: Vec2, p: Vec2, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// A simple polygon. The closing edge from the last vertex back to the first
/// is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolygonError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertex {0} is not finite")]
    NonFinite(usize),
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

impl Polygon {
    /// Builds a polygon, dropping a repeated closing vertex if present.
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self, PolygonError> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(PolygonError::TooFewVertices(vertices.len()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(PolygonError::NonFinite(i));
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // skip edges sharing a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a1, a2) = (vertices[i], vertices[(i + 1) % n]);
                let (b1, b2) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return Err(PolygonError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd containment test.
    pub fn contains(&self, p: Vec2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Distance from `p` to the union of `polygons`: zero inside any of them,
/// else the minimum distance to any edge.
pub fn distance_to_union(polygons: &[Polygon], p: Vec2) -> f64 {
    if polygons.iter().any(|poly| poly.contains(p)) {
        return 0.0;
    }
    polygons
        .iter()
        .map(|poly| poly.boundary_distance(p))
        .fold(f64::INFINITY, f64::min)
}

/// Nearest point on a polyline: `(arc_length, distance, segment_index)`.
pub fn project_onto_polyline(points: &[Vec2], p: Vec2) -> Option<(f64, f64, usize)> {
    match points.len() {
        0 => None,
        1 => Some((0.0, p.distance(points[0]), 0)),
        _ => {
            let mut best: Option<(f64, f64, usize)> = None;
            let mut acc = 0.0;
            for (i, w) in points.windows(2).enumerate() {
                let seg_len = w[0].distance(w[1]);
                let (s, d) = project_onto_segment(p, w[0], w[1]);
                if best.map_or(true, |(_, bd, _)| d < bd) {
                    best = Some((acc + s * seg_len, d, i));
                }
                acc += seg_len;
            }
            best
        }
    }
}

/// Point at arc length `s` along a polyline, clamped to its ends.
pub fn point_at_arc_length(points: &[Vec2], s: f64) -> Option<Vec2> {
    let first = *points.first()?;
    if s <= 0.0 {
        return Some(first);
    }
    let mut acc = 0.0;
    for w in points.windows(2) {
        let seg_len = w[0].distance(w[1]);
        if acc + seg_len >= s && seg_len > 0.0 {
            return Some(w[0].lerp(w[1], (s - acc) / seg_len));
        }
        acc += seg_len;
    }
    points.last().copied()
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}
