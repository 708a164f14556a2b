//! Gliding-vertex encoding of oriented quadrangles.
//!
//! A quadrangle is described by its horizontal bounding box plus four length
//! ratios, one per box side, locating where the object touches that side, and
//! an obliquity factor (object area over box area).
//!
//! Corner correspondence and gliding directions run clockwise on screen:
//!
//! | vertex | touches | starts at | glides |
//! |--------|---------|-----------|--------|
//! | v1     | top     | TL        | +x     |
//! | v2     | right   | TR        | +y     |
//! | v3     | bottom  | BR        | -x     |
//! | v4     | left    | BL        | -y     |
//!
//! With this convention both `alpha = 0` and `alpha = 1` reproduce the
//! horizontal box, and axis-aligned rectangles encode to `alpha = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HBox, Point, Quad};

/// Default obliquity threshold for horizontal/oriented selection.
pub const DEFAULT_T_R: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlidingRep {
    pub hbox: HBox,
    pub alpha: [f64; 4],
    pub r: f64,
}

impl GlidingRep {
    /// Builds a representation from raw values, clamping `alpha` and `r` to [0, 1].
    pub fn new(hbox: HBox, alpha: [f64; 4], r: f64) -> Result<Self> {
        if !alpha.iter().all(|a| a.is_finite()) || !r.is_finite() {
            return Err(Error::invalid("non-finite gliding ratios"));
        }
        Ok(GlidingRep {
            hbox,
            alpha: alpha.map(|a| a.clamp(0.0, 1.0)),
            r: r.clamp(0.0, 1.0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionPolicy {
    t_r: f64,
}

impl SelectionPolicy {
    pub fn new(t_r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t_r) {
            return Err(Error::invalid(format!("t_r = {t_r} outside [0, 1]")));
        }
        Ok(SelectionPolicy { t_r })
    }

    pub fn t_r(&self) -> f64 {
        self.t_r
    }
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy { t_r: DEFAULT_T_R }
    }
}

/// Picks the extreme vertex by `key`; ties go to the larger `along` value.
fn extreme(v: &[Point; 4], key: impl Fn(&Point) -> f64, along: impl Fn(&Point) -> f64) -> Point {
    let mut best = v[0];
    for p in &v[1..] {
        let (k, kb) = (key(p), key(&best));
        if k > kb || (k == kb && along(p) > along(&best)) {
            best = *p;
        }
    }
    best
}

/// The four touching vertices in top, right, bottom, left order.
pub fn extreme_vertices(q: &Quad) -> [Point; 4] {
    let v = q.vertices();
    [
        extreme(v, |p| -p.y, |p| p.x),
        extreme(v, |p| p.x, |p| p.y),
        extreme(v, |p| p.y, |p| -p.x),
        extreme(v, |p| -p.x, |p| -p.y),
    ]
}

pub fn encode(q: &Quad) -> Result<GlidingRep> {
    let v = q.vertices();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in v {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::degenerate("object has zero-extent bounding box"));
    }
    let hbox = HBox::from_extents(x0, y0, x1, y1)?;
    let [top, right, bottom, left] = extreme_vertices(q);
    let alpha = [
        (top.x - x0) / w,
        (right.y - y0) / h,
        (x1 - bottom.x) / w,
        (y1 - left.y) / h,
    ];
    let r = q.area() / (w * h);
    GlidingRep::new(hbox, alpha, r)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

/// Places the glided vertices on the box sides. The result is convex and
/// positively oriented, but may be degenerate for extreme ratios.
pub fn decode(rep: &GlidingRep) -> Quad {
    let b = &rep.hbox;
    let a = rep.alpha.map(|a| a.clamp(0.0, 1.0));
    let (x0, x1, y0, y1) = (b.xmin(), b.xmax(), b.ymin(), b.ymax());
    Quad::from_convex_unchecked([
        Point::new(lerp(x0, x1, a[0]), y0),
        Point::new(x1, lerp(y0, y1, a[1])),
        Point::new(lerp(x1, x0, a[2]), y1),
        Point::new(x0, lerp(y1, y0, a[3])),
    ])
}

/// Horizontal box when the object looks nearly horizontal (`r > t_r`),
/// decoded quadrangle otherwise.
pub fn select(rep: &GlidingRep, policy: &SelectionPolicy) -> Quad {
    if rep.r > policy.t_r {
        Quad::from_hbox(&rep.hbox)
    } else {
        decode(rep)
    }
}

/// Area ratio between an object and an enclosing box.
pub fn obliquity(obj: &Quad, b: &HBox) -> Result<f64> {
    let box_area = b.area();
    if box_area.is_nan() || box_area <= 0.0 {
        return Err(Error::degenerate("zero-area box"));
    }
    let slack = 1e-6 * b.w.max(b.h).max(1.0);
    if !obj.vertices().iter().all(|p| b.contains(*p, slack)) {
        return Err(Error::invalid("box does not enclose the object"));
    }
    Ok((obj.area() / box_area).min(1.0))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::{rbox_to_quad, RBox};

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Quad {
        Quad::from_coords([x0, y0, x1, y0, x1, y1, x0, y1]).unwrap()
    }

    fn unit_diamond() -> Quad {
        Quad::from_coords([0.5, 0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5]).unwrap()
    }

    fn vertex_set_err(a: &Quad, b: &Quad) -> f64 {
        a.vertices()
            .iter()
            .map(|p| {
                b.vertices()
                    .iter()
                    .map(|q| p.dist(*q))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn horizontal_rectangle_encodes_to_ones() {
        let rep = encode(&rect(2.0, 3.0, 9.0, 4.5)).unwrap();
        assert_eq!(rep.alpha, [1.0; 4]);
        assert_eq!(rep.r, 1.0);
        assert_eq!(rep.hbox, HBox::new(5.5, 3.75, 7.0, 1.5).unwrap());
    }

    #[test]
    fn diamond_encodes_to_halves() {
        let rep = encode(&unit_diamond()).unwrap();
        assert_eq!(rep.alpha, [0.5; 4]);
        assert_eq!(rep.r, 0.5);
    }

    #[test]
    fn decode_examples() {
        let hbox = HBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        let zero = decode(&GlidingRep::new(hbox, [0.0; 4], 1.0).unwrap());
        assert_eq!(zero.vertices(), &hbox.corners());

        let one = decode(&GlidingRep::new(hbox, [1.0; 4], 1.0).unwrap());
        let c = hbox.corners();
        assert_eq!(one.vertices(), &[c[1], c[2], c[3], c[0]]);

        let half = decode(&GlidingRep::new(hbox, [0.5; 4], 0.5).unwrap());
        assert_eq!(half.vertices(), unit_diamond().vertices());
    }

    #[test]
    fn decode_clamps_ratios() {
        let hbox = HBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let rep = GlidingRep::new(hbox, [1.7, -0.3, 0.5, 0.5], 1.4).unwrap();
        assert_eq!(rep.alpha, [1.0, 0.0, 0.5, 0.5]);
        assert_eq!(rep.r, 1.0);
        assert!(GlidingRep::new(hbox, [f64::NAN, 0.0, 0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn select_threshold() {
        let hbox = HBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        let p = SelectionPolicy::default();
        assert_eq!(p.t_r(), 0.8);
        let horiz = select(&GlidingRep::new(hbox, [0.5; 4], 0.9).unwrap(), &p);
        assert_eq!(horiz, Quad::from_hbox(&hbox));
        let low = GlidingRep::new(hbox, [0.5; 4], 0.3).unwrap();
        assert_eq!(select(&low, &p), decode(&low));
        let at = GlidingRep::new(hbox, [0.5; 4], 0.8).unwrap();
        assert_eq!(select(&at, &p), decode(&at));
        assert!(SelectionPolicy::new(1.2).is_err());
    }

    #[test]
    fn select_boundaries_are_always_oriented() {
        let hbox = HBox::new(3.0, 2.0, 4.0, 2.0).unwrap();
        for r in [0.01, 0.5, 0.99, 1.0] {
            let rep = GlidingRep::new(hbox, [0.3, 0.6, 0.2, 0.9], r).unwrap();
            assert_eq!(select(&rep, &SelectionPolicy::new(1.0).unwrap()), decode(&rep));
        }
        let rep = GlidingRep::new(hbox, [0.3, 0.6, 0.2, 0.9], 0.5).unwrap();
        assert_eq!(
            select(&rep, &SelectionPolicy::new(0.0).unwrap()),
            Quad::from_hbox(&hbox)
        );
    }

    #[test]
    fn obliquity_examples() {
        let r = rect(0.0, 0.0, 4.0, 2.0);
        assert_eq!(obliquity(&r, &r.aabb().unwrap()).unwrap(), 1.0);
        let unit = HBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(obliquity(&unit_diamond(), &unit).unwrap(), 0.5);

        let thin = rbox_to_quad(&RBox::new(0.0, 0.0, 10.0, 1.0, PI / 4.0).unwrap());
        let b = thin.aabb().unwrap();
        let expected = 10.0 / (b.w * b.h);
        assert_abs_diff_eq!(obliquity(&thin, &b).unwrap(), expected, epsilon = 1e-12);

        let small = HBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
        assert!(obliquity(&unit_diamond(), &small).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_rotated_rectangles(x in -500.0f64..500.0, y in -500.0f64..500.0,
                                        w in 1.0f64..200.0, h in 1.0f64..200.0,
                                        theta in -PI..PI) {
            let t = crate::geometry::normalize_half_turn(theta);
            prop_assume!((t.abs() > 1e-3) && ((t.abs() - PI / 2.0).abs() > 1e-3));
            let q = rbox_to_quad(&RBox::new(x, y, w, h, theta).unwrap());
            let back = decode(&encode(&q).unwrap());
            prop_assert!(vertex_set_err(&q, &back) < 1e-9);
        }

        #[test]
        fn decode_then_encode(x in -100.0f64..100.0, y in -100.0f64..100.0,
                              w in 0.5f64..50.0, h in 0.5f64..50.0,
                              a in prop::array::uniform4(0.001f64..0.999)) {
            let hbox = HBox::new(x, y, w, h).unwrap();
            let rep = GlidingRep::new(hbox, a, 1.0).unwrap();
            let q = decode(&rep);
            let enc = encode(&q).unwrap();
            prop_assert!((enc.hbox.x - x).abs() < 1e-9 && (enc.hbox.y - y).abs() < 1e-9);
            prop_assert!((enc.hbox.w - w).abs() < 1e-9 && (enc.hbox.h - h).abs() < 1e-9);
            for (e, x) in enc.alpha.iter().zip(a) {
                prop_assert!((e - x).abs() < 1e-9);
            }
            let r = obliquity(&q, &hbox).unwrap();
            prop_assert!(r > 0.0 && r <= 1.0);
        }

        #[test]
        fn encode_ignores_vertex_labeling(x in -100.0f64..100.0, w in 1.0f64..50.0,
                                          h in 1.0f64..50.0, theta in -PI..PI, k in 0usize..4) {
            let q = rbox_to_quad(&RBox::new(x, 0.0, w, h, theta).unwrap());
            let mut v = *q.vertices();
            v.rotate_left(k);
            let cycled = Quad::new(v).unwrap();
            prop_assert_eq!(encode(&q).unwrap(), encode(&cycled).unwrap());
        }
    }

    #[test]
    fn obliquity_is_one_only_when_filled() {
        let hbox = HBox::new(0.0, 0.0, 2.0, 1.0).unwrap();
        let full = decode(&GlidingRep::new(hbox, [1.0; 4], 1.0).unwrap());
        assert_eq!(obliquity(&full, &hbox).unwrap(), 1.0);
        let part = decode(&GlidingRep::new(hbox, [0.9, 1.0, 1.0, 1.0], 1.0).unwrap());
        assert!(obliquity(&part, &hbox).unwrap() < 1.0);
    }
}
