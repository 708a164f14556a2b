//! Synthetic scenes and the representation simulations: angle-vs-offset
//! sensitivity and vertex-order confusion.
//!
//! The IoU-based sensitivity numbers are a proxy for end-task accuracy, not
//! a measurement of it.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{GtRecord, PerImage};
use crate::error::{Error, Result};
use crate::geometry::{min_area_rect, rbox_to_quad, Point, Quad, RBox};
use crate::losses::pairwise_sum;
use crate::representation::{decode, encode, GlidingRep};

/// Placement attempts per object before a scene is declared infeasible.
const MAX_ATTEMPTS: usize = 1000;

/// SplitMix64 finalizer; derives independent stream seeds from one seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: f64,
    pub height: f64,
    pub count: (usize, usize),
    /// Long side over short side.
    pub aspect: (f64, f64),
    /// Square root of the object area.
    pub scale: (f64, f64),
    /// Orientation range in radians for non-horizontal objects.
    pub angle: (f64, f64),
    /// Fraction of objects placed exactly axis-aligned.
    pub horizontal_fraction: f64,
    /// Maximum pairwise IoU between objects of one scene.
    pub overlap_cap: f64,
    pub classes: Vec<String>,
    pub difficult_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 512.0,
            height: 512.0,
            count: (4, 12),
            aspect: (1.0, 6.0),
            scale: (24.0, 64.0),
            angle: (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            horizontal_fraction: 0.3,
            overlap_cap: 0.1,
            classes: vec!["plane".into(), "ship".into(), "vehicle".into()],
            difficult_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64), min: f64| -> Result<()> {
            if !(lo.is_finite() && hi.is_finite() && lo >= min && lo <= hi) {
                return Err(Error::config(format!("{name} range [{lo}, {hi}] is invalid")));
            }
            Ok(())
        };
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::config("image size must be positive"));
        }
        if self.count.0 > self.count.1 {
            return Err(Error::config("count range is empty"));
        }
        range("aspect", self.aspect, 1.0)?;
        range("scale", self.scale, f64::MIN_POSITIVE)?;
        range("angle", self.angle, f64::NEG_INFINITY)?;
        if !(0.0..1.0).contains(&self.overlap_cap) {
            return Err(Error::config(format!("overlap cap {} outside [0, 1)", self.overlap_cap)));
        }
        for (name, f) in [("horizontal fraction", self.horizontal_fraction), ("difficult fraction", self.difficult_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("{name} {f} outside [0, 1]")));
            }
        }
        if self.classes.is_empty() || self.classes.iter().any(|c| c.is_empty() || c.contains(char::is_whitespace)) {
            return Err(Error::config("class names must be non-empty tokens"));
        }
        Ok(())
    }
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Rotated-rectangle objects placed fully inside the image, pairwise IoU at
/// most the overlap cap.
pub fn gen_scene(spec: &SceneSpec) -> Result<Vec<GtRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.random_range(spec.count.0..=spec.count.1);
    let mut out: Vec<GtRecord> = Vec::with_capacity(n);
    for _ in 0..n {
        let class = spec.classes[rng.random_range(0..spec.classes.len())].clone();
        let difficult = rng.random_bool(spec.difficult_fraction);
        let placed = (0..MAX_ATTEMPTS).find_map(|_| {
            let aspect = sample_range(&mut rng, spec.aspect);
            let scale = sample_range(&mut rng, spec.scale);
            let (w, h) = (scale * aspect.sqrt(), scale / aspect.sqrt());
            let theta = if rng.random_bool(spec.horizontal_fraction) {
                0.0
            } else {
                sample_range(&mut rng, spec.angle)
            };
            let (s, c) = theta.sin_cos();
            let hx = (w * c.abs() + h * s.abs()) / 2.0;
            let hy = (w * s.abs() + h * c.abs()) / 2.0;
            if 2.0 * hx >= spec.width || 2.0 * hy >= spec.height {
                return None;
            }
            let x = rng.random_range(hx..spec.width - hx);
            let y = rng.random_range(hy..spec.height - hy);
            let q = rbox_to_quad(&RBox::new(x, y, w, h, theta).ok()?);
            let b = q.aabb().ok()?;
            if b.xmin() < 0.0 || b.ymin() < 0.0 || b.xmax() > spec.width || b.ymax() > spec.height {
                return None;
            }
            out.iter().all(|g| g.quad.iou(&q) <= spec.overlap_cap).then_some(q)
        });
        let quad = placed.ok_or_else(|| {
            Error::config(format!("could not place object {} after {MAX_ATTEMPTS} attempts", out.len()))
        })?;
        out.push(GtRecord { quad, class, difficult });
    }
    Ok(out)
}

pub fn image_id(i: usize) -> String {
    format!("img_{i:05}")
}

/// `n_images` scenes, each seeded from a stream of the spec seed.
pub fn gen_dataset(spec: &SceneSpec, n_images: usize) -> Result<PerImage<GtRecord>> {
    (0..n_images)
        .map(|i| {
            let s = SceneSpec {
                seed: derive_seed(spec.seed, i as u64),
                ..spec.clone()
            };
            Ok((image_id(i), gen_scene(&s)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PerturbKind {
    RBox,
    Vertex,
    Gliding,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 3] = [PerturbKind::RBox, PerturbKind::Vertex, PerturbKind::Gliding];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::RBox => "rbox",
            PerturbKind::Vertex => "vertex",
            PerturbKind::Gliding => "gliding",
        }
    }
}

impl FromStr for PerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown perturbation kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    /// Radians for `RBox`; fraction of the local side length for the others.
    pub epsilon: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("perturbation magnitude {epsilon} must be >= 0")));
        }
        Ok(PerturbSpec { kind, epsilon, seed })
    }
}

pub fn perturb(gt: &Quad, spec: &PerturbSpec) -> Result<Quad> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    perturb_with(gt, spec.kind, spec.epsilon, &mut rng)
}

/// Mean of the two sides meeting at vertex `i`.
fn local_side(v: &[Point; 4], i: usize) -> f64 {
    (v[i].dist(v[(i + 1) % 4]) + v[i].dist(v[(i + 3) % 4])) / 2.0
}

/// One draw of representation noise of magnitude `eps`.
///
/// * rbox: fit the minimum-area rotated rectangle and turn it by ±eps.
/// * vertex: move each vertex by `eps` times its local side length in a
///   uniformly random direction. May fail when the result is not a valid
///   quadrilateral.
/// * gliding: add uniform noise in [-eps, eps] to each α, clamp, decode.
///   Never fails.
pub fn perturb_with<R: Rng>(gt: &Quad, kind: PerturbKind, eps: f64, rng: &mut R) -> Result<Quad> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("perturbation magnitude {eps} must be >= 0")));
    }
    if eps == 0.0 {
        return Ok(*gt);
    }
    match kind {
        PerturbKind::RBox => {
            let rb = min_area_rect(gt.vertices())?;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Ok(rbox_to_quad(&RBox::new(rb.x, rb.y, rb.w, rb.h, rb.theta + sign * eps)?))
        }
        PerturbKind::Vertex => {
            let v = gt.vertices();
            let moved: [Point; 4] = std::array::from_fn(|i| {
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let len = eps * local_side(v, i);
                Point::new(v[i].x + len * phi.cos(), v[i].y + len * phi.sin())
            });
            Quad::new(moved)
        }
        PerturbKind::Gliding => {
            let rep = encode(gt)?;
            let alpha = rep.alpha.map(|a| a + rng.random_range(-eps..=eps));
            Ok(decode(&GlidingRep::new(rep.hbox, alpha, rep.r)?))
        }
    }
}

/// Mean vertex displacement caused by turning a `w` x `h` rectangle by `angle`.
pub fn rotation_displacement(w: f64, h: f64, angle: f64) -> f64 {
    w.hypot(h) * (angle / 2.0).sin()
}

/// Noise magnitude for `kind` whose nominal mean vertex displacement on `gt`
/// equals `disp`.
///
/// Uniform noise in [-e, e] moves a glided vertex by e/2 of its side on
/// average, so e = 4·disp / (w + h) over the horizontal box. Vertex noise
/// has a fixed length, so e = disp / mean side. Clamping is ignored, which
/// favours neither representation in the matching.
pub fn matched_epsilon(gt: &Quad, kind: PerturbKind, angle: f64) -> Result<f64> {
    let rb = min_area_rect(gt.vertices())?;
    let disp = rotation_displacement(rb.w, rb.h, angle);
    Ok(match kind {
        PerturbKind::RBox => angle,
        PerturbKind::Gliding => {
            let b = gt.aabb()?;
            4.0 * disp / (b.w + b.h)
        }
        PerturbKind::Vertex => disp / ((rb.w + rb.h) / 2.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub aspects: Vec<f64>,
    /// Angle errors in degrees; offset kinds use the matched displacement.
    pub angles_deg: Vec<f64>,
    pub kinds: Vec<PerturbKind>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            aspects: vec![4.0, 8.0, 16.0],
            angles_deg: vec![0.0, 1.0, 2.0, 4.0, 8.0],
            kinds: vec![PerturbKind::RBox, PerturbKind::Gliding],
            trials: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub kind: PerturbKind,
    pub aspect: f64,
    pub epsilon_deg: f64,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn get(&self, kind: PerturbKind, aspect: f64, epsilon_deg: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.aspect == aspect && c.epsilon_deg == epsilon_deg)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,aspect,epsilon,mean_iou,std_iou,trials\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{}",
                c.kind.name(),
                c.aspect,
                c.epsilon_deg,
                c.mean_iou,
                c.std_iou,
                c.trials
            );
        }
        s
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1.0)).sqrt())
}

/// Mean IoU between ground truth and perturbed copy, per (kind, aspect, ε).
///
/// Ground truths are rectangles with short side 10, orientation uniform over
/// a half turn. Every kind in a cell sees the same ground truths. A vertex
/// perturbation that breaks the quadrilateral scores IoU 0.
pub fn robustness_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    if cfg.trials == 0 {
        return Err(Error::config("trials must be >= 1"));
    }
    if let Some(a) = cfg.aspects.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
        return Err(Error::config(format!("aspect {a} must be >= 1")));
    }
    if let Some(e) = cfg.angles_deg.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(Error::config(format!("angle error {e} must be >= 0")));
    }
    let mut cells = Vec::new();
    for (ai, &aspect) in cfg.aspects.iter().enumerate() {
        let mut grng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ai as u64));
        let gts: Vec<Quad> = (0..cfg.trials)
            .map(|_| {
                let theta = grng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
                rbox_to_quad(&RBox::new(0.0, 0.0, 10.0 * aspect, 10.0, theta).expect("positive size"))
            })
            .collect();
        for &kind in &cfg.kinds {
            for (ei, &deg) in cfg.angles_deg.iter().enumerate() {
                let stream = ((ai as u64) << 32) | ((kind as u64) << 16) | ei as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x5EED, stream));
                let ious: Vec<f64> = gts
                    .iter()
                    .map(|gt| {
                        let eps = matched_epsilon(gt, kind, deg.to_radians())?;
                        Ok(perturb_with(gt, kind, eps, &mut rng).map_or(0.0, |p| gt.iou(&p)))
                    })
                    .collect::<Result<_>>()?;
                let (mean_iou, std_iou) = mean_std(&ious);
                cells.push(SweepCell {
                    kind,
                    aspect,
                    epsilon_deg: deg,
                    mean_iou,
                    std_iou,
                    trials: cfg.trials,
                });
            }
        }
    }
    Ok(SweepTable { cells })
}

/// Regression target of the vertex baseline: vertices starting from the
/// topmost (ties to smaller x), clockwise on screen, as offsets from the box
/// center normalized by box width and height.
pub fn vertex_order_target(q: &Quad) -> Result<[f64; 8]> {
    let v = q.vertices();
    let b = q.aabb()?;
    let first = (0..4)
        .min_by(|&i, &j| v[i].y.total_cmp(&v[j].y).then(v[i].x.total_cmp(&v[j].x)))
        .expect("four vertices");
    let mut t = [0.0; 8];
    for k in 0..4 {
        let p = v[(first + k) % 4];
        t[2 * k] = (p.x - b.x) / b.w;
        t[2 * k + 1] = (p.y - b.y) / b.h;
    }
    Ok(t)
}

pub fn gliding_target(q: &Quad) -> Result<[f64; 4]> {
    Ok(encode(q)?.alpha)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpRow {
    pub theta_deg: f64,
    pub next_deg: f64,
    pub vertex_jump: f64,
    pub gliding_jump: f64,
    /// Either endpoint is exactly axis-aligned.
    pub axis_aligned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscontinuityReport {
    pub aspect: f64,
    pub rows: Vec<JumpRow>,
}

impl DiscontinuityReport {
    fn argmax(&self, f: impl Fn(&JumpRow) -> Option<f64>) -> Option<(usize, f64)> {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| f(r).map(|v| (i, v)))
            .fold(None, |best, (i, v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
    }

    /// Largest vertex-baseline jump and the row where it occurs.
    pub fn vertex_max(&self) -> Option<(&JumpRow, f64)> {
        self.argmax(|r| Some(r.vertex_jump)).map(|(i, v)| (&self.rows[i], v))
    }

    /// Largest gliding jump away from exact axis alignment, where α is set
    /// to 1 by convention rather than by continuity.
    pub fn gliding_max(&self) -> Option<(&JumpRow, f64)> {
        self.argmax(|r| (!r.axis_aligned).then_some(r.gliding_jump))
            .map(|(i, v)| (&self.rows[i], v))
    }

    /// Largest gliding jump on steps touching exact axis alignment.
    pub fn gliding_axis_max(&self) -> Option<f64> {
        self.argmax(|r| r.axis_aligned.then_some(r.gliding_jump)).map(|(_, v)| v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta_deg,next_deg,vertex_jump,gliding_jump,axis_aligned\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.4},{:.4},{:.9},{:.9},{}",
                r.theta_deg, r.next_deg, r.vertex_jump, r.gliding_jump, r.axis_aligned as u8
            );
        }
        s
    }
}

fn is_axis_aligned(deg: f64) -> bool {
    (deg / 90.0).fract() == 0.0
}

/// Target jumps between consecutive angles of a sweep, for a rectangle of
/// the given aspect ratio.
pub fn vertex_order_discontinuity(aspect: f64, angles_deg: &[f64]) -> Result<DiscontinuityReport> {
    if !(aspect >= 1.0 && aspect.is_finite()) {
        return Err(Error::invalid(format!("aspect {aspect} must be >= 1")));
    }
    if angles_deg.len() < 2 || angles_deg.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("sweep needs at least two finite angles"));
    }
    let quad =
        |deg: f64| -> Result<Quad> { Ok(rbox_to_quad(&RBox::new(0.0, 0.0, aspect, 1.0, f64::to_radians(deg))?)) };
    let rows = angles_deg
        .windows(2)
        .map(|w| {
            let (a, b) = (quad(w[0])?, quad(w[1])?);
            Ok(JumpRow {
                theta_deg: w[0],
                next_deg: w[1],
                vertex_jump: l2(&vertex_order_target(&a)?, &vertex_order_target(&b)?),
                gliding_jump: l2(&gliding_target(&a)?, &gliding_target(&b)?),
                axis_aligned: is_axis_aligned(w[0]) || is_axis_aligned(w[1]),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DiscontinuityReport { aspect, rows })
}

/// `2n + 1` angles, `step` degrees apart, centered on 0 with 0 hit exactly.
pub fn symmetric_sweep(n: usize, step_deg: f64) -> Vec<f64> {
    (0..=2 * n).map(|k| (k as f64 - n as f64) * step_deg).collect()
}
