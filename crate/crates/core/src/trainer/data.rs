//! Synthetic proposals and features standing in for a region proposal
//! network and pooled image features.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::GtRecord;
use crate::error::{Error, Result};
use crate::geometry::HBox;
use crate::losses::{box_delta_encode, RegressionTarget};
use crate::representation::{encode, extreme_vertices};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub hbox: HBox,
    /// Best axis-aligned IoU with any ground-truth box.
    pub iou: f64,
    /// Assigned ground truth (index into the image's records), positives only.
    pub gt: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig {
    /// Jittered positives drawn per ground-truth object.
    pub per_object: usize,
    /// Background proposals per positive.
    pub neg_ratio: f64,
    /// Center jitter, fraction of box size (uniform, both signs).
    pub center_jitter: f64,
    /// Log-size jitter (uniform, both signs).
    pub size_jitter: f64,
    pub pos_iou: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            per_object: 4,
            neg_ratio: 3.0,
            center_jitter: 0.1,
            size_jitter: 0.15,
            pos_iou: 0.5,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_object == 0 {
            return Err(Error::config("per_object must be >= 1"));
        }
        if !(self.neg_ratio >= 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::config("neg_ratio must be >= 0"));
        }
        if !(self.center_jitter >= 0.0 && self.size_jitter >= 0.0) {
            return Err(Error::config("jitter must be >= 0"));
        }
        if !(self.pos_iou > 0.0 && self.pos_iou <= 1.0) {
            return Err(Error::config("pos_iou must lie in (0, 1]"));
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 200;

fn assign(b: &HBox, gt_boxes: &[HBox], pos_iou: f64) -> Proposal {
    let mut best = (0.0, None);
    for (j, g) in gt_boxes.iter().enumerate() {
        let ov = b.iou(g);
        if ov > best.0 {
            best = (ov, Some(j));
        }
    }
    Proposal {
        hbox: *b,
        iou: best.0,
        gt: if best.0 >= pos_iou { best.1 } else { None },
    }
}

/// Positives jittered around every object, then backgrounds drawn uniformly
/// over the image with IoU below the positive threshold.
pub fn gen_proposals<R: Rng>(
    gts: &[GtRecord],
    width: f64,
    height: f64,
    cfg: &ProposalConfig,
    rng: &mut R,
) -> Result<Vec<Proposal>> {
    cfg.validate()?;
    let boxes: Vec<HBox> = gts.iter().map(|g| g.quad.aabb()).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for g in &boxes {
        let mut got = 0;
        for _ in 0..MAX_ATTEMPTS {
            if got == cfg.per_object {
                break;
            }
            let cj = cfg.center_jitter;
            let sj = cfg.size_jitter;
            let x = g.x + g.w * rng.random_range(-cj..=cj);
            let y = g.y + g.h * rng.random_range(-cj..=cj);
            let w = g.w * rng.random_range(-sj..=sj).exp();
            let h = g.h * rng.random_range(-sj..=sj).exp();
            let p = assign(&HBox::new(x, y, w, h)?, &boxes, cfg.pos_iou);
            if p.gt.is_some() {
                out.push(p);
                got += 1;
            }
        }
    }
    let n_pos = out.len();
    let n_neg = (cfg.neg_ratio * n_pos.max(1) as f64).round() as usize;
    let (smin, smax) = boxes
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), g| (a.min(g.w.min(g.h)), b.max(g.w.max(g.h))));
    let (smin, smax) = if boxes.is_empty() {
        (width.min(height) / 16.0, width.min(height) / 4.0)
    } else {
        (smin, smax.max(smin * 1.01))
    };
    let mut got = 0;
    for _ in 0..n_neg * MAX_ATTEMPTS {
        if got == n_neg {
            break;
        }
        let w = rng.random_range(smin..smax).min(width);
        let h = rng.random_range(smin..smax).min(height);
        let x = rng.random_range(w / 2.0..=width - w / 2.0);
        let y = rng.random_range(h / 2.0..=height - h / 2.0);
        let p = assign(&HBox::new(x, y, w, h)?, &boxes, cfg.pos_iou);
        if p.gt.is_none() {
            out.push(p);
            got += 1;
        }
    }
    Ok(out)
}

/// Builds feature vectors from proposals and noisy views of their objects.
///
/// Layout: proposal box normalized by the image (4), the object's top,
/// right, bottom and left vertices relative to the proposal (8), a noisy
/// class-appearance one-hot (K), and a constant 1. Background proposals have
/// the vertex and class slots zeroed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Featurizer {
    pub n_classes: usize,
    /// Vertex noise as a fraction of object scale; also the class-slot noise.
    pub noise: f64,
    pub width: f64,
    pub height: f64,
}

impl Featurizer {
    pub fn dim(&self) -> usize {
        4 + 8 + self.n_classes + 1
    }

    pub fn featurize<R: Rng>(&self, p: &Proposal, gt: Option<(&GtRecord, usize)>, rng: &mut R) -> Result<Vec<f64>> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("feature noise must be >= 0"));
        }
        let b = &p.hbox;
        let mut f = Vec::with_capacity(self.dim());
        f.extend([b.x / self.width, b.y / self.height, b.w / self.width, b.h / self.height]);
        match gt {
            Some((g, class)) => {
                if class == 0 || class > self.n_classes {
                    return Err(Error::invalid(format!("class index {class} out of range")));
                }
                let gb = g.quad.aabb()?;
                let sigma = self.noise * (gb.w * gb.h).sqrt();
                let vn = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
                let cn = Normal::new(0.0, self.noise).map_err(|e| Error::config(e.to_string()))?;
                for v in extreme_vertices(&g.quad) {
                    f.push((v.x + vn.sample(rng) - b.x) / b.w);
                    f.push((v.y + vn.sample(rng) - b.y) / b.h);
                }
                for k in 1..=self.n_classes {
                    f.push(f64::from(u8::from(k == class)) + cn.sample(rng));
                }
            }
            None => f.extend(std::iter::repeat_n(0.0, 8 + self.n_classes)),
        }
        f.push(1.0);
        Ok(f)
    }
}

/// Regression target of a positive proposal.
pub fn regression_target(p: &Proposal, g: &GtRecord) -> Result<RegressionTarget> {
    let rep = encode(&g.quad)?;
    RegressionTarget::new(box_delta_encode(&rep.hbox, &p.hbox)?, rep.alpha, rep.r)
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::synth::{gen_scene, SceneSpec};

    fn scene() -> Vec<GtRecord> {
        gen_scene(&SceneSpec {
            seed: 21,
            count: (8, 8),
            ..SceneSpec::default()
        })
        .unwrap()
    }

    fn class_of(g: &GtRecord) -> usize {
        1 + ["plane", "ship", "vehicle"].iter().position(|c| *c == g.class).unwrap()
    }

    #[test]
    fn proposals_respect_thresholds_and_ratio() {
        let gts = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ProposalConfig::default();
        let props = gen_proposals(&gts, 512.0, 512.0, &cfg, &mut rng).unwrap();
        let pos = props.iter().filter(|p| p.gt.is_some()).count();
        assert_eq!(pos, 8 * cfg.per_object);
        assert_eq!(props.len() - pos, 3 * pos);
        for p in &props {
            assert!((0.0..=1.0).contains(&p.iou));
            match p.gt {
                Some(j) => {
                    assert!(p.iou >= 0.5);
                    assert_eq!(p.hbox.iou(&gts[j].quad.aabb().unwrap()), p.iou);
                }
                None => assert!(p.iou < 0.5),
            }
        }
    }

    #[test]
    fn features_are_deterministic_and_zeroed_for_background() {
        let gts = scene();
        let fz = Featurizer {
            n_classes: 3,
            noise: 0.05,
            width: 512.0,
            height: 512.0,
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let props = gen_proposals(&gts, 512.0, 512.0, &ProposalConfig::default(), &mut rng).unwrap();
            props
                .iter()
                .map(|p| {
                    let g = p.gt.map(|j| (&gts[j], class_of(&gts[j])));
                    (p.gt.is_some(), fz.featurize(p, g, &mut rng).unwrap())
                })
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        for (pos, f) in &a {
            assert_eq!(f.len(), fz.dim());
            assert_eq!(f[f.len() - 1], 1.0);
            if !pos {
                assert!(f[4..f.len() - 1].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn zero_noise_targets_recoverable_by_least_squares() {
        // Center offsets are linear in the vertex features, so an ordinary
        // least-squares fit over positives must be exact.
        let gts = scene();
        let fz = Featurizer {
            n_classes: 3,
            noise: 0.0,
            width: 512.0,
            height: 512.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let props = gen_proposals(&gts, 512.0, 512.0, &ProposalConfig::default(), &mut rng).unwrap();
        let pos: Vec<&Proposal> = props.iter().filter(|p| p.gt.is_some()).collect();
        let rows: Vec<Vec<f64>> = pos
            .iter()
            .map(|p| {
                let g = &gts[p.gt.unwrap()];
                fz.featurize(p, Some((g, class_of(g))), &mut rng).unwrap()
            })
            .collect();
        let x = DMatrix::from_fn(rows.len(), fz.dim(), |i, j| rows[i][j]);
        for k in 0..2 {
            let y = DVector::from_iterator(
                pos.len(),
                pos.iter().map(|p| regression_target(p, &gts[p.gt.unwrap()]).unwrap().deltas[k]),
            );
            let sol = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
            let resid = (&x * sol - &y).amax();
            assert!(resid < 1e-9, "delta {k}: residual {resid}");
        }
    }
}
