//! Planar polygon primitives in image coordinates.
//!
//! The y axis points down, so "top" means minimal y. Polygons are stored with
//! a positive shoelace sum, which is clockwise as drawn on screen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clip results below this area are treated as empty.
pub const EMPTY_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Shoelace sum halved. Coordinates are taken relative to one of the vertices,
/// which makes the result exact for axis-aligned rectangles.
pub fn signed_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    // Lexicographically smallest vertex, so relabeling cannot change the bits.
    let n = poly.len();
    let s = (0..n)
        .min_by(|&i, &j| poly[i].x.total_cmp(&poly[j].x).then(poly[i].y.total_cmp(&poly[j].y)))
        .unwrap_or(0);
    let o = poly[s];
    let mut acc = 0.0;
    for k in 0..n {
        let a = poly[(s + k) % n] - o;
        let b = poly[(s + k + 1) % n] - o;
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Unsigned polygon area.
pub fn area(poly: &[Point]) -> Result<f64> {
    check_finite(poly)?;
    Ok(signed_area(poly).abs())
}

fn check_finite(poly: &[Point]) -> Result<()> {
    if poly.iter().all(Point::is_finite) {
        Ok(())
    } else {
        Err(Error::invalid("non-finite polygon coordinate"))
    }
}

/// Axis-aligned box stored as center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl HBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid("non-finite box"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::degenerate(format!("box size {w} x {h}")));
        }
        Ok(HBox { x, y, w, h })
    }

    pub fn from_extents(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        HBox::new(
            (xmin + xmax) / 2.0,
            (ymin + ymax) / 2.0,
            xmax - xmin,
            ymax - ymin,
        )
    }

    pub fn xmin(&self) -> f64 {
        self.x - self.w / 2.0
    }
    pub fn xmax(&self) -> f64 {
        self.x + self.w / 2.0
    }
    pub fn ymin(&self) -> f64 {
        self.y - self.h / 2.0
    }
    pub fn ymax(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in TL, TR, BR, BL order.
    pub fn corners(&self) -> [Point; 4] {
        let (x0, x1, y0, y1) = (self.xmin(), self.xmax(), self.ymin(), self.ymax());
        [
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ]
    }

    pub fn contains(&self, p: Point, slack: f64) -> bool {
        p.x >= self.xmin() - slack
            && p.x <= self.xmax() + slack
            && p.y >= self.ymin() - slack
            && p.y <= self.ymax() + slack
    }

    /// Plain axis-aligned IoU, used for proposal labeling.
    pub fn iou(&self, o: &HBox) -> f64 {
        let iw = (self.xmax().min(o.xmax()) - self.xmin().max(o.xmin())).max(0.0);
        let ih = (self.ymax().min(o.ymax()) - self.ymin().max(o.ymin())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Tightest axis-aligned box around a polygon.
pub fn aabb(poly: &[Point]) -> Result<HBox> {
    if poly.len() < 3 {
        return Err(Error::invalid("aabb needs at least 3 vertices"));
    }
    check_finite(poly)?;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in poly {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
        return Err(Error::degenerate("polygon has zero extent"));
    }
    HBox::from_extents(x0, y0, x1, y1)
}

/// Rotated rectangle; `theta` is in radians, normalized to [-pi/2, pi/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if ![x, y, w, h, theta].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite rotated box"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::degenerate(format!("rotated box size {w} x {h}")));
        }
        Ok(RBox {
            x,
            y,
            w,
            h,
            theta: normalize_half_turn(theta),
        })
    }
}

/// Maps an angle into [-pi/2, pi/2); a rectangle is symmetric under a half turn.
pub fn normalize_half_turn(theta: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let t = (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if t >= FRAC_PI_2 {
        t - PI
    } else {
        t
    }
}

/// Corners of a rotated rectangle, canonical orientation.
pub fn rbox_to_quad(rb: &RBox) -> Quad {
    let (s, c) = rb.theta.sin_cos();
    let (hw, hh) = (rb.w / 2.0, rb.h / 2.0);
    let local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
    let pts = local.map(|(lx, ly)| Point::new(rb.x + lx * c - ly * s, rb.y + lx * s + ly * c));
    Quad(pts)
}

/// Convex quadrilateral with positive orientation.
///
/// `Quad::new` rejects zero-area input. Quads produced by decoding a gliding
/// representation may be degenerate (two glided vertices landing on the same
/// corner) but are always convex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad([Point; 4]);

impl Quad {
    pub fn new(pts: [Point; 4]) -> Result<Self> {
        check_finite(&pts)?;
        let scale = aabb(&pts)
            .map(|b| b.w.max(b.h))
            .map_err(|_| Error::degenerate("quad has zero extent"))?;
        let mut pts = pts;
        if signed_area(&pts) < 0.0 {
            pts = [pts[0], pts[3], pts[2], pts[1]];
        }
        if !is_convex(&pts, scale) {
            let hull = convex_hull(&pts);
            if hull.len() != 4 {
                return Err(Error::degenerate(format!(
                    "non-convex quad with a {}-vertex hull",
                    hull.len()
                )));
            }
            pts = [hull[0], hull[1], hull[2], hull[3]];
        }
        if signed_area(&pts) <= EMPTY_AREA * scale * scale {
            return Err(Error::degenerate("quad has zero area"));
        }
        Ok(Quad(pts))
    }

    pub fn from_coords(c: [f64; 8]) -> Result<Self> {
        Quad::new([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }

    /// For callers that already guarantee convexity and orientation.
    pub(crate) fn from_convex_unchecked(pts: [Point; 4]) -> Self {
        Quad(pts)
    }

    pub fn from_hbox(b: &HBox) -> Self {
        Quad(b.corners())
    }

    pub fn vertices(&self) -> &[Point; 4] {
        &self.0
    }

    pub fn coords(&self) -> [f64; 8] {
        let v = &self.0;
        [
            v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y,
        ]
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.0).abs()
    }

    pub fn aabb(&self) -> Result<HBox> {
        aabb(&self.0)
    }

    pub fn iou(&self, other: &Quad) -> f64 {
        iou(&self.0, &other.0)
    }
}

impl AsRef<[Point]> for Quad {
    fn as_ref(&self) -> &[Point] {
        &self.0
    }
}

fn is_convex(pts: &[Point], scale: f64) -> bool {
    let tol = EMPTY_AREA * scale * scale;
    let n = pts.len();
    (0..n).all(|i| cross(pts[i], pts[(i + 1) % n], pts[(i + 2) % n]) >= -tol)
}

/// Andrew's monotone chain; returns strict hull vertices in positive orientation.
pub fn convex_hull(pts: &[Point]) -> Vec<Point> {
    let mut p: Vec<Point> = pts.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<Point> = Vec::with_capacity(p.len());
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(p.len());
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Sutherland-Hodgman clipping of one convex polygon against another.
///
/// Both inputs must have positive orientation. The result is empty when its
/// area falls below [`EMPTY_AREA`].
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    if subject.len() < 3 || clip.len() < 3 || signed_area(clip) <= EMPTY_AREA {
        return Vec::new();
    }
    let mut out: Vec<Point> = subject.to_vec();
    let mut input: Vec<Point> = Vec::with_capacity(subject.len() + clip.len());
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        std::mem::swap(&mut input, &mut out);
        out.clear();
        let inside = |p: Point| cross(a, b, p) >= 0.0;
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(line_intersection(prev, cur, a, b)),
                (false, true) => {
                    out.push(line_intersection(prev, cur, a, b));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    if signed_area(&out) < EMPTY_AREA {
        out.clear();
    }
    out
}

/// Intersection of segment p-q with the infinite line through a-b.
fn line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom == 0.0 {
        return q;
    }
    let t = dp / denom;
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

fn bounds(poly: &[Point]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    )
}

fn lex_cmp(a: &[Point], b: &[Point]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(p, q)| p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Intersection over union of two convex polygons, exact up to rounding.
///
/// The operands are put in a canonical order before clipping so that
/// `iou(a, b) == iou(b, a)` holds bit-for-bit.
pub fn iou(a: &[Point], b: &[Point]) -> f64 {
    let (ax0, ay0, ax1, ay1) = bounds(a);
    let (bx0, by0, bx1, by1) = bounds(b);
    if ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0 {
        return 0.0;
    }
    let (first, second) = if lex_cmp(a, b).is_le() { (a, b) } else { (b, a) };
    let inter = signed_area(&clip_convex(first, second)).max(0.0);
    let union = signed_area(a).abs() + signed_area(b).abs() - inter;
    if union <= EMPTY_AREA || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum-area enclosing rectangle by rotating calipers over hull edges.
pub fn min_area_rect(poly: &[Point]) -> Result<RBox> {
    check_finite(poly)?;
    let hull = convex_hull(poly);
    if hull.len() < 3 {
        return Err(Error::degenerate("hull has fewer than 3 vertices"));
    }
    let mut best: Option<(f64, RBox)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let len = a.dist(b);
        if len == 0.0 {
            continue;
        }
        let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let d = *p - a;
            let u = d.x * ux + d.y * uy;
            let v = -d.x * uy + d.y * ux;
            lo_u = lo_u.min(u);
            hi_u = hi_u.max(u);
            lo_v = lo_v.min(v);
            hi_v = hi_v.max(v);
        }
        let (w, h) = (hi_u - lo_u, hi_v - lo_v);
        let area = w * h;
        if best.as_ref().is_some_and(|(ba, _)| area >= *ba) {
            continue;
        }
        let (cu, cv) = ((lo_u + hi_u) / 2.0, (lo_v + hi_v) / 2.0);
        let cx = a.x + cu * ux - cv * uy;
        let cy = a.y + cu * uy + cv * ux;
        best = Some((area, RBox::new(cx, cy, w, h, uy.atan2(ux))?));
    }
    best.map(|(_, r)| r)
        .ok_or_else(|| Error::degenerate("no hull edge of positive length"))
}

/// Even-odd point-in-polygon test.
pub fn contains_point(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}
