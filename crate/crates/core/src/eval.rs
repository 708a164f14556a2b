//! Detection benchmarks: oriented mAP (VOC/DOTA style), one-to-one
//! precision/recall/F-measure, and miss rate versus false positives per image.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::dataio::{DetRecord, GtRecord, PerImage};
use crate::error::Error;
use crate::geometry::Quad;
use crate::losses::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive { gt: usize },
    FalsePositive,
    /// Best match is a difficult ground truth; counted neither way.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub outcomes: Vec<Outcome>,
    pub gt_matched: Vec<bool>,
}

/// Greedy matching for one image and one class.
///
/// `dets` must already be sorted by descending score. Each detection looks at
/// its highest-IoU ground truth only; it is a true positive when that IoU
/// reaches `iou_thresh` and the ground truth is still unmatched.
pub fn match_detections(dets: &[Quad], gts: &[Quad], difficult: &[bool], iou_thresh: f64) -> MatchResult {
    assert_eq!(gts.len(), difficult.len(), "one difficult flag per ground truth");
    let mut gt_matched = vec![false; gts.len()];
    let mut outcomes = Vec::with_capacity(dets.len());
    for d in dets {
        let mut best = (0.0, None);
        for (j, g) in gts.iter().enumerate() {
            let ov = d.iou(g);
            if ov > best.0 {
                best = (ov, Some(j));
            }
        }
        let outcome = match best {
            (ov, Some(j)) if ov >= iou_thresh => {
                if difficult[j] {
                    Outcome::Ignored
                } else if !gt_matched[j] {
                    gt_matched[j] = true;
                    Outcome::TruePositive { gt: j }
                } else {
                    Outcome::FalsePositive
                }
            }
            _ => Outcome::FalsePositive,
        };
        outcomes.push(outcome);
    }
    MatchResult { outcomes, gt_matched }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    /// Mean of interpolated precision at recall 0, 0.1, ..., 1.
    #[default]
    Voc07,
    /// Area under the interpolated precision envelope.
    AllPoints,
}

impl FromStr for ApMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "voc07" => Ok(ApMode::Voc07),
            "all-points" | "all_points" => Ok(ApMode::AllPoints),
            other => Err(Error::invalid(format!("unknown AP mode `{other}`"))),
        }
    }
}

impl fmt::Display for ApMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMode::Voc07 => "voc07",
            ApMode::AllPoints => "all-points",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub class: String,
    pub iou_thresh: f64,
    pub n_pos: usize,
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Builds the curve from (score, is_tp) pairs, already ranked.
    pub fn from_ranked(class: &str, iou_thresh: f64, n_pos: usize, ranked_tp: &[bool]) -> Self {
        let mut tp = 0usize;
        let mut points = Vec::with_capacity(ranked_tp.len());
        for (i, &is_tp) in ranked_tp.iter().enumerate() {
            tp += usize::from(is_tp);
            points.push(PrPoint {
                recall: if n_pos > 0 { tp as f64 / n_pos as f64 } else { 0.0 },
                precision: tp as f64 / (i + 1) as f64,
            });
        }
        PrCurve {
            class: class.to_string(),
            iou_thresh,
            n_pos,
            points,
        }
    }
}

pub fn average_precision(curve: &PrCurve, mode: ApMode) -> f64 {
    if curve.n_pos == 0 || curve.points.is_empty() {
        return 0.0;
    }
    match mode {
        ApMode::Voc07 => {
            let mut sum = 0.0;
            for i in 0..=10 {
                let t = i as f64 / 10.0;
                let p = curve
                    .points
                    .iter()
                    .filter(|pt| pt.recall >= t)
                    .map(|pt| pt.precision)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
        ApMode::AllPoints => {
            let mut rec = vec![0.0];
            let mut prec = vec![0.0];
            for pt in &curve.points {
                rec.push(pt.recall);
                prec.push(pt.precision);
            }
            rec.push(1.0);
            prec.push(0.0);
            for i in (1..prec.len()).rev() {
                prec[i - 1] = prec[i - 1].max(prec[i]);
            }
            let mut ap = 0.0;
            for i in 0..rec.len() - 1 {
                if rec[i + 1] != rec[i] {
                    ap += (rec[i + 1] - rec[i]) * prec[i + 1];
                }
            }
            ap
        }
    }
}

fn image_ids<'a>(dets: &'a PerImage<DetRecord>, gts: &'a PerImage<GtRecord>) -> BTreeSet<&'a str> {
    dets.keys().chain(gts.keys()).map(String::as_str).collect()
}

/// Per-image matching for one class; returns ranked-by-score (score, outcome)
/// pairs across the whole dataset plus the positive count.
fn match_class(
    dets: &PerImage<DetRecord>,
    gts: &PerImage<GtRecord>,
    class: Option<&str>,
    iou_thresh: f64,
) -> (Vec<(f64, Outcome)>, usize) {
    let keep = |c: &str| class.is_none_or(|k| k == c);
    let mut all = Vec::new();
    let mut n_pos = 0;
    for id in image_ids(dets, gts) {
        let img_gts: Vec<&GtRecord> = gts.get(id).into_iter().flatten().filter(|g| keep(&g.class)).collect();
        let mut img_dets: Vec<&DetRecord> = dets.get(id).into_iter().flatten().filter(|d| keep(&d.class)).collect();
        img_dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        n_pos += img_gts.iter().filter(|g| !g.difficult).count();
        // Without a class filter, matching must still respect class labels.
        let groups: BTreeSet<&str> = img_dets.iter().map(|d| d.class.as_str()).collect();
        for c in groups {
            let cd: Vec<&&DetRecord> = img_dets.iter().filter(|d| d.class == c).collect();
            let cg: Vec<&&GtRecord> = img_gts.iter().filter(|g| g.class == c).collect();
            let dq: Vec<Quad> = cd.iter().map(|d| d.quad).collect();
            let gq: Vec<Quad> = cg.iter().map(|g| g.quad).collect();
            let diff: Vec<bool> = cg.iter().map(|g| g.difficult).collect();
            let m = match_detections(&dq, &gq, &diff, iou_thresh);
            all.extend(cd.iter().map(|d| d.score).zip(m.outcomes));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    (all, n_pos)
}

pub fn pr_curve(dets: &PerImage<DetRecord>, gts: &PerImage<GtRecord>, class: &str, iou_thresh: f64) -> PrCurve {
    let (ranked, n_pos) = match_class(dets, gts, Some(class), iou_thresh);
    let flags: Vec<bool> = ranked
        .iter()
        .filter(|(_, o)| *o != Outcome::Ignored)
        .map(|(_, o)| matches!(o, Outcome::TruePositive { .. }))
        .collect();
    PrCurve::from_ranked(class, iou_thresh, n_pos, &flags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class: String,
    pub n_gt: usize,
    pub n_det: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub iou_thresh: f64,
    pub mode: ApMode,
    pub classes: Vec<ClassAp>,
    pub map: f64,
}

/// Mean AP over the classes that have at least one non-difficult ground truth.
pub fn mean_average_precision(
    dets: &PerImage<DetRecord>,
    gts: &PerImage<GtRecord>,
    iou_thresh: f64,
    mode: ApMode,
) -> MapReport {
    let mut n_gt: BTreeMap<&str, usize> = BTreeMap::new();
    for g in gts.values().flatten().filter(|g| !g.difficult) {
        *n_gt.entry(g.class.as_str()).or_default() += 1;
    }
    let classes: Vec<ClassAp> = n_gt
        .iter()
        .map(|(&class, &n)| {
            let curve = pr_curve(dets, gts, class, iou_thresh);
            ClassAp {
                class: class.to_string(),
                n_gt: n,
                n_det: dets.values().flatten().filter(|d| d.class == class).count(),
                ap: average_precision(&curve, mode),
            }
        })
        .collect();
    let aps: Vec<f64> = classes.iter().map(|c| c.ap).collect();
    let map = if aps.is_empty() { 0.0 } else { pairwise_sum(&aps) / aps.len() as f64 };
    MapReport {
        iou_thresh,
        mode,
        classes,
        map,
    }
}

impl MapReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "oriented mAP evaluation");
        let _ = writeln!(s, "iou_threshold: {:.2}", self.iou_thresh);
        let _ = writeln!(s, "ap_mode: {}", self.mode);
        let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>8}", "class", "n_gt", "n_det", "AP");
        for c in &self.classes {
            let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>8.4}", c.class, c.n_gt, c.n_det, c.ap);
        }
        let _ = writeln!(s, "mAP: {:.6}", self.map);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,n_gt,n_det,ap\n");
        for c in &self.classes {
            let _ = writeln!(s, "{},{},{},{:.6}", c.class, c.n_gt, c.n_det, c.ap);
        }
        let _ = writeln!(s, "mAP,,,{:.6}", self.map);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FMeasure {
    pub tp: usize,
    pub n_det: usize,
    pub n_gt: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl FMeasure {
    pub fn from_counts(tp: usize, n_det: usize, n_gt: usize) -> Self {
        let precision = if n_det > 0 { tp as f64 / n_det as f64 } else { 0.0 };
        let recall = if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 };
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        FMeasure {
            tp,
            n_det,
            n_gt,
            precision,
            recall,
            f,
        }
    }

    pub fn to_text(&self, iou_thresh: f64) -> String {
        format!(
            "one-to-one F-measure evaluation\niou_threshold: {:.2}\ndetections: {}\nground_truth: {}\ntrue_positives: {}\nprecision: {:.6}\nrecall: {:.6}\nf_measure: {:.6}\n",
            iou_thresh, self.n_det, self.n_gt, self.tp, self.precision, self.recall, self.f
        )
    }

    pub fn to_csv(&self) -> String {
        format!(
            "tp,n_det,n_gt,precision,recall,f_measure\n{},{},{},{:.6},{:.6},{:.6}\n",
            self.tp, self.n_det, self.n_gt, self.precision, self.recall, self.f
        )
    }
}

/// Maximum-cardinality bipartite matching (Kuhn's augmenting paths) on the
/// graph of same-class pairs with IoU at or above the threshold.
fn max_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut count = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; n_right];
        if augment(u, adj, &mut seen, &mut owner) {
            count += 1;
        }
    }
    count
}

/// One-to-one precision, recall and F-measure. Difficult flags are not used;
/// every ground truth counts.
pub fn f_measure(dets: &PerImage<DetRecord>, gts: &PerImage<GtRecord>, iou_thresh: f64) -> FMeasure {
    let (mut tp, mut n_det, mut n_gt) = (0, 0, 0);
    for id in image_ids(dets, gts) {
        let d: &[DetRecord] = dets.get(id).map_or(&[], Vec::as_slice);
        let g: &[GtRecord] = gts.get(id).map_or(&[], Vec::as_slice);
        n_det += d.len();
        n_gt += g.len();
        let adj: Vec<Vec<usize>> = d
            .iter()
            .map(|di| {
                g.iter()
                    .enumerate()
                    .filter(|(_, gj)| gj.class == di.class)
                    .filter(|(_, gj)| {
                        let ov = di.quad.iou(&gj.quad);
                        ov > 0.0 && ov >= iou_thresh
                    })
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        tp += max_matching(&adj, g.len());
    }
    FMeasure::from_counts(tp, n_det, n_gt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FppiPoint {
    pub score: f64,
    pub fppi: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LamrReport {
    pub iou_thresh: f64,
    pub n_images: usize,
    pub n_pos: usize,
    pub curve: Vec<FppiPoint>,
    /// (reference FPPI, sampled miss rate) pairs.
    pub samples: Vec<(f64, f64)>,
    pub lamr: f64,
}

pub const MISS_RATE_FLOOR: f64 = 1e-10;

/// Nine FPPI reference points, log-spaced over [1e-2, 1].
pub fn fppi_references() -> [f64; 9] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + 2.0 * k as f64 / 8.0))
}

/// Miss rate against FPPI as the score threshold sweeps down, and the
/// geometric mean of miss rate at the nine reference FPPI values.
///
/// The curve starts at (FPPI 0, miss rate 1) for an infinite threshold and
/// gets one point per distinct score. Each reference samples the last point
/// whose FPPI does not exceed it.
pub fn lamr(dets: &PerImage<DetRecord>, gts: &PerImage<GtRecord>, iou_thresh: f64) -> LamrReport {
    let (ranked, n_pos) = match_class(dets, gts, None, iou_thresh);
    let n_images = image_ids(dets, gts).len().max(1);
    let ranked: Vec<(f64, bool)> = ranked
        .into_iter()
        .filter(|(_, o)| *o != Outcome::Ignored)
        .map(|(s, o)| (s, matches!(o, Outcome::TruePositive { .. })))
        .collect();
    let mr = |tp: usize| if n_pos > 0 { 1.0 - tp as f64 / n_pos as f64 } else { 0.0 };
    let mut curve = vec![FppiPoint {
        score: f64::INFINITY,
        fppi: 0.0,
        miss_rate: mr(0),
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(score, is_tp)) in ranked.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = ranked.get(i + 1).is_none_or(|n| n.0 != score);
        if last_of_group {
            curve.push(FppiPoint {
                score,
                fppi: fp as f64 / n_images as f64,
                miss_rate: mr(tp),
            });
        }
    }
    let samples: Vec<(f64, f64)> = fppi_references()
        .iter()
        .map(|&r| {
            let m = curve
                .iter()
                .rev()
                .find(|p| p.fppi <= r)
                .map_or(1.0, |p| p.miss_rate);
            (r, m)
        })
        .collect();
    let logs: Vec<f64> = samples.iter().map(|(_, m)| m.max(MISS_RATE_FLOOR).ln()).collect();
    let lamr = (pairwise_sum(&logs) / logs.len() as f64).exp();
    LamrReport {
        iou_thresh,
        n_images,
        n_pos,
        curve,
        samples,
        lamr,
    }
}

impl LamrReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "miss rate vs false positives per image");
        let _ = writeln!(s, "iou_threshold: {:.2}", self.iou_thresh);
        let _ = writeln!(s, "images: {}", self.n_images);
        let _ = writeln!(s, "ground_truth: {}", self.n_pos);
        let _ = writeln!(s, "{:>12} {:>12}", "fppi_ref", "miss_rate");
        for (r, m) in &self.samples {
            let _ = writeln!(s, "{r:>12.6} {m:>12.6}");
        }
        let _ = writeln!(s, "lamr: {:.6}", self.lamr);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("score,fppi,miss_rate\n");
        for p in &self.curve {
            let _ = writeln!(s, "{:.6},{:.6},{:.6}", p.score, p.fppi, p.miss_rate);
        }
        s
    }
}
