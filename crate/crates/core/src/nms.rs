//! Greedy oriented non-maximum suppression over polygon detections.

use std::collections::BTreeMap;

use crate::geometry::Quad;

/// Default suppression IoU.
pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoly {
    pub poly: Quad,
    pub score: f64,
    pub class: usize,
}

/// Indices into `dets` sorted by descending score, ties by input index.
fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Indices of the detections kept by greedy NMS, in descending score order.
///
/// A candidate is suppressed by a kept detection when their IoU reaches
/// `iou_thresh` and they actually overlap; a zero-IoU pair never suppresses,
/// so `iou_thresh = 0` keeps exactly the mutually disjoint detections.
pub fn oriented_nms_indices(dets: &[ScoredPoly], iou_thresh: f64) -> Vec<usize> {
    let order = score_order(dets.iter().map(|d| d.score));
    let bounds: Vec<_> = dets.iter().map(|d| extent(&d.poly)).collect();
    let mut kept: Vec<usize> = Vec::new();
    'cand: for &i in &order {
        for &k in &kept {
            if !bounds_overlap(&bounds[i], &bounds[k]) {
                continue;
            }
            let ov = dets[i].poly.iou(&dets[k].poly);
            if ov > 0.0 && ov >= iou_thresh {
                continue 'cand;
            }
        }
        kept.push(i);
    }
    kept
}

pub fn oriented_nms(dets: &[ScoredPoly], iou_thresh: f64) -> Vec<ScoredPoly> {
    oriented_nms_indices(dets, iou_thresh)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

/// Runs NMS independently per class. Output is grouped by ascending class,
/// each group in descending score order.
pub fn oriented_nms_per_class(dets: &[ScoredPoly], iou_thresh: f64) -> Vec<ScoredPoly> {
    let mut groups: BTreeMap<usize, Vec<ScoredPoly>> = BTreeMap::new();
    for d in dets {
        groups.entry(d.class).or_default().push(*d);
    }
    groups
        .values()
        .flat_map(|g| oriented_nms(g, iou_thresh))
        .collect()
}

fn extent(q: &Quad) -> [f64; 4] {
    q.vertices().iter().fold(
        [f64::MAX, f64::MAX, f64::MIN, f64::MIN],
        |[x0, y0, x1, y1], p| [x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)],
    )
}

fn bounds_overlap(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}
