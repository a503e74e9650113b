//! Exact geometry of oriented rectangles.
//!
//! Angles are measured counter-clockwise in a right-handed (x right, y up)
//! frame. A box `(cx, cy, w, h, theta)` has its `w` edge along the direction
//! `(cos theta, sin theta)`. The canonical angle range is `[0, pi/2)`; any other
//! angle is folded into it by [`canonicalize`], exchanging `w` and `h` when a
//! quarter turn is absorbed.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Vertex deduplication tolerance, in pixels.
pub const EPS_GEOM: f64 = 1e-9;
/// Intersections with a smaller area (px²) are reported as empty.
pub const EPS_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    /// Rotates about the origin by `theta` radians (counter-clockwise).
    #[inline]
    pub fn rotated(self, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Five-parameter oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RotatedBox {
    /// Builds a box, rejecting non-finite fields and non-positive extents.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h, theta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.cx, self.cy, self.w, self.h, self.theta];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "extent must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// The same point set written with the other edge first: `(h, w, theta + pi/2)`.
    pub fn edge_exchanged(&self) -> Self {
        Self {
            w: self.h,
            h: self.w,
            theta: self.theta + FRAC_PI_2,
            ..*self
        }
    }

    pub fn canonicalize(&self) -> Result<Self> {
        canonicalize(self)
    }

    pub fn to_quad(&self) -> Quad {
        rbox_to_quad(self)
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_rbox(p, self)
    }

    /// Applies a rigid motion: rotate by `angle` about the origin, then translate.
    pub fn transformed(&self, angle: f64, shift: Point) -> Self {
        let c = self.center().rotated(angle) + shift;
        Self {
            cx: c.x,
            cy: c.y,
            theta: self.theta + angle,
            ..*self
        }
    }
}

/// Folds `theta` into `[0, pi/2)`, exchanging `w`/`h` when a quarter turn is absorbed.
pub fn canonicalize(b: &RotatedBox) -> Result<RotatedBox> {
    b.validate()?;
    let mut t = b.theta.rem_euclid(PI);
    if t >= PI {
        // rem_euclid rounds tiny negative inputs up to exactly PI
        t = 0.0;
    }
    let (mut w, mut h) = (b.w, b.h);
    if t >= FRAC_PI_2 {
        t -= FRAC_PI_2;
        std::mem::swap(&mut w, &mut h);
    }
    Ok(RotatedBox {
        cx: b.cx,
        cy: b.cy,
        w,
        h,
        theta: t.max(0.0),
    })
}

/// Corners of the box, counter-clockwise, starting from the `(-w/2, -h/2)` corner.
pub fn rbox_to_quad(b: &RotatedBox) -> Quad {
    let (s, c) = b.theta.sin_cos();
    let (hw, hh) = (b.w / 2.0, b.h / 2.0);
    let corner = |u: f64, v: f64| Point::new(b.cx + c * u - s * v, b.cy + s * u + c * v);
    Quad {
        vertices: [
            corner(-hw, -hh),
            corner(hw, -hh),
            corner(hw, hh),
            corner(-hw, hh),
        ],
    }
}

/// Inside-or-on-boundary test, done in the box's own frame.
pub fn point_in_rbox(p: Point, b: &RotatedBox) -> bool {
    let (s, c) = b.theta.sin_cos();
    let d = p - b.center();
    let u = c * d.x + s * d.y;
    let v = -s * d.x + c * d.y;
    u.abs() <= b.w / 2.0 + EPS_GEOM && v.abs() <= b.h / 2.0 + EPS_GEOM
}

/// Signed area (positive for counter-clockwise winding).
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += points[i].cross(points[(i + 1) % n]);
    }
    acc / 2.0
}

fn is_strictly_convex_ccw(points: &[Point]) -> bool {
    let n = points.len();
    (0..n).all(|i| {
        let a = points[i];
        let b = points[(i + 1) % n];
        let c = points[(i + 2) % n];
        (b - a).cross(c - b) > 0.0
    })
}

/// Four-vertex convex polygon, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub vertices: [Point; 4],
}

impl Quad {
    /// Accepts the vertices in any winding. Clockwise input is reversed; a
    /// self-intersecting ordering is repaired by sorting around the centroid.
    /// Non-convex or degenerate vertex sets are rejected.
    pub fn new(vertices: [Point; 4]) -> Result<Self> {
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Degenerate("non-finite quad vertex".into()));
        }
        let mut v = vertices;
        if signed_area(&v) < 0.0 {
            v.reverse();
        }
        if !is_strictly_convex_ccw(&v) {
            let c = v.iter().fold(Point::default(), |acc, &p| acc + p) * 0.25;
            v.sort_by(|a, b| {
                let ta = (a.y - c.y).atan2(a.x - c.x);
                let tb = (b.y - c.y).atan2(b.x - c.x);
                ta.total_cmp(&tb)
            });
            if !is_strictly_convex_ccw(&v) {
                return Err(Error::Degenerate(format!(
                    "quad is not convex: {vertices:?}"
                )));
            }
        }
        if signed_area(&v) <= EPS_AREA {
            return Err(Error::Degenerate("quad has zero area".into()));
        }
        Ok(Self { vertices: v })
    }

    pub fn from_coords(c: [f64; 8]) -> Result<Self> {
        Self::new([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }

    pub fn coords(&self) -> [f64; 8] {
        let v = &self.vertices;
        [
            v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y,
        ]
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Point {
        self.vertices.iter().fold(Point::default(), |acc, &p| acc + p) * 0.25
    }

    pub fn to_polygon(&self) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.vertices.to_vec(),
        }
    }

    /// Cross-product sign test against every edge.
    pub fn contains(&self, p: Point) -> bool {
        (0..4).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % 4];
            (b - a).cross(p - a) >= -EPS_GEOM * (b - a).norm()
        })
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Quad {
        Quad {
            vertices: self.vertices.map(f),
        }
    }
}

/// Convex polygon, counter-clockwise, without repeated consecutive vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let mut v = dedup_ring(points);
        if v.len() < 3 {
            return Err(Error::Degenerate("polygon needs at least 3 vertices".into()));
        }
        if signed_area(&v) < 0.0 {
            v.reverse();
        }
        let n = v.len();
        let convex = (0..n).all(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            let c = v[(i + 2) % n];
            (b - a).cross(c - b) >= -EPS_GEOM
        });
        if !convex {
            return Err(Error::Degenerate("polygon is not convex".into()));
        }
        Ok(Self { vertices: v })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            vertices: vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }
}

impl From<&Quad> for ConvexPolygon {
    fn from(q: &Quad) -> Self {
        q.to_polygon()
    }
}

fn dedup_ring(points: Vec<Point>) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|q| q.distance(p) > EPS_GEOM) {
            out.push(p);
        }
    }
    while out.len() > 1 && out[0].distance(out[out.len() - 1]) <= EPS_GEOM {
        out.pop();
    }
    out
}

/// Sutherland–Hodgman clipping of `subject` against each edge of `clip`.
///
/// Returns `None` when the polygons are disjoint or the overlap is a sliver
/// with area below [`EPS_AREA`].
pub fn clip_convex(subject: &ConvexPolygon, clip: &ConvexPolygon) -> Option<ConvexPolygon> {
    let mut output = subject.vertices.clone();
    let cv = &clip.vertices;
    for i in 0..cv.len() {
        if output.is_empty() {
            return None;
        }
        let a = cv[i];
        let edge = cv[(i + 1) % cv.len()] - a;
        let side = |p: Point| edge.cross(p - a);

        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut prev_side = side(prev);
        for &cur in &input {
            let cur_side = side(cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(intersect(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(intersect(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    let vertices = dedup_ring(output);
    if vertices.len() < 3 || signed_area(&vertices) < EPS_AREA {
        return None;
    }
    Some(ConvexPolygon { vertices })
}

#[inline]
fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    p + (q - p) * t
}

/// Intersection-over-union of two convex polygons.
pub fn polygon_iou(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    iou_from_areas(a.area(), b.area(), clip_convex(a, b).map_or(0.0, |p| p.area()))
}

fn iou_from_areas(area_a: f64, area_b: f64, inter: f64) -> f64 {
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Exact IoU of two rotated boxes.
pub fn skew_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let pa = rbox_to_quad(a).to_polygon();
    let pb = rbox_to_quad(b).to_polygon();
    let inter = clip_convex(&pa, &pb).map_or(0.0, |p| p.area());
    iou_from_areas(a.area(), b.area(), inter)
}

/// Andrew's monotone chain. Collinear points are dropped; output is CCW.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.distance(*b) <= EPS_GEOM);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - b) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle of a point set.
///
/// The optimal rectangle has one side flush with a hull edge, so every hull
/// edge is tried as a caliper direction. Hulls here have at most a handful of
/// vertices, which makes the per-edge projection cheaper than pointer-chasing.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedBox> {
    let hull = convex_hull(points);
    if hull.len() < 3 || signed_area(&hull) <= EPS_AREA {
        return Err(Error::Degenerate(
            "points are collinear; enclosing rectangle has zero extent".into(),
        ));
    }
    let mut best: Option<(f64, RotatedBox)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()] - hull[i];
        let u = e * (1.0 / e.norm());
        let v = Point::new(-u.y, u.x);
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &p in &hull {
            let (pu, pv) = (p.dot(u), p.dot(v));
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let c = u * ((umin + umax) / 2.0) + v * ((vmin + vmax) / 2.0);
            let rect = RotatedBox {
                cx: c.x,
                cy: c.y,
                w: umax - umin,
                h: vmax - vmin,
                theta: u.y.atan2(u.x),
            };
            best = Some((area, rect));
        }
    }
    let (_, rect) = best.expect("hull has at least three edges");
    canonicalize(&rect)
}
