//! Desk-scale detection head: synthetic proposals and features, a small
//! network trained with the full head objective, and inference through
//! decode, selection and oriented NMS.

mod data;
mod model;
mod sgd;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use data::{gen_proposals, regression_target, Featurizer, Proposal, ProposalConfig};
pub use model::{Activations, HeadModel};
pub use sgd::{lr_at, Sgd};

use crate::dataio::{DetRecord, GtRecord, PerImage};
use crate::error::{Error, Result};
use crate::losses::{box_delta_decode, softmax, BatchLabels, LossWeights, RegressionTarget, TotalLoss};
use crate::nms::{oriented_nms_per_class, ScoredPoly, DEFAULT_NMS_IOU};
use crate::representation::{select, GlidingRep, SelectionPolicy};
use crate::synth::derive_seed;

/// Box size deltas are clamped to this before exponentiation.
const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: usize,
    /// Steps at which the learning rate is divided by 10.
    pub decay_steps: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub hidden: usize,
    /// Vertex observation noise, fraction of object scale.
    pub feature_noise: f64,
    pub proposals: ProposalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 7.5e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            steps: 6000,
            decay_steps: vec![4000, 5500],
            batch_size: 64,
            seed: 0,
            weights: LossWeights::default(),
            hidden: 64,
            feature_noise: 0.05,
            proposals: ProposalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight decay must be >= 0"));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::config("batch size and hidden width must be positive"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config("feature noise must be >= 0"));
        }
        LossWeights::new(self.weights.lambda1, self.weights.lambda2, self.weights.lambda3, self.weights.beta)
            .map_err(|e| Error::config(e.to_string()))?;
        self.proposals.validate()
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub proposal: Proposal,
    pub features: Vec<f64>,
    /// 0 is background, `k` is `class_names[k - 1]`.
    pub class: usize,
    pub target: RegressionTarget,
}

pub fn class_index(class_names: &[String], name: &str) -> Result<usize> {
    class_names
        .iter()
        .position(|c| c == name)
        .map(|i| i + 1)
        .ok_or_else(|| Error::invalid(format!("unknown class `{name}`")))
}

/// Proposals and features for every image, each image on its own RNG stream.
pub fn build_samples(
    gts: &PerImage<GtRecord>,
    class_names: &[String],
    featurizer: &Featurizer,
    proposals: &ProposalConfig,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, (id, recs)) in gts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        for p in gen_proposals(recs, featurizer.width, featurizer.height, proposals, &mut rng)? {
            let (class, g, target) = match p.gt {
                Some(j) => {
                    let g = &recs[j];
                    let c = class_index(class_names, &g.class)?;
                    (c, Some((g, c)), regression_target(&p, g)?)
                }
                None => (0, None, RegressionTarget::background()),
            };
            out.push(Sample {
                image_id: id.clone(),
                proposal: p,
                features: featurizer.featurize(&p, g, &mut rng)?,
                class,
                target,
            });
        }
    }
    Ok(out)
}

fn batch_parts<'a>(samples: &[&'a Sample]) -> (Vec<&'a [f64]>, Vec<RegressionTarget>, BatchLabels) {
    (
        samples.iter().map(|s| s.features.as_slice()).collect(),
        samples.iter().map(|s| s.target).collect(),
        BatchLabels::from_classes(samples.iter().map(|s| s.class).collect()),
    )
}

/// Objective over a whole sample set, as one batch.
pub fn dataset_loss(model: &HeadModel, samples: &[Sample], weights: &LossWeights) -> Result<TotalLoss> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let (f, t, l) = batch_parts(&refs);
    Ok(model.loss_and_grad(&f, &t, &l, weights)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub cls: f64,
    pub h: f64,
    pub alpha: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: HeadModel,
    pub trace: Vec<LossRecord>,
    /// Full-dataset objective before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss,cls,h,alpha,r\n");
    for t in trace {
        let _ = writeln!(
            s,
            "{},{:e},{:.9},{:.9},{:.9},{:.9},{:.9}",
            t.step, t.lr, t.loss, t.cls, t.h, t.alpha, t.r
        );
    }
    s
}

/// Mini-batch SGD over reshuffled epochs.
pub fn sgd_fit(model: &HeadModel, samples: &[Sample], cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if !samples.iter().any(|s| s.class > 0) {
        return Err(Error::invalid("training set has no positive proposals"));
    }
    let initial_loss = dataset_loss(model, samples, &cfg.weights)?.value;
    let mut model = model.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    if cfg.steps > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut opt = Sgd::new(model.n_params(), cfg.momentum, cfg.weight_decay)?;
        let mask = model.decay_mask();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut cursor = order.len();
        for step in 0..cfg.steps {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size.min(samples.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(&samples[order[cursor]]);
                cursor += 1;
            }
            let (f, t, l) = batch_parts(&batch);
            let (loss, grad) = model.loss_and_grad(&f, &t, &l, &cfg.weights)?;
            if !loss.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { step, loss: loss.value });
            }
            let lr = lr_at(step, cfg.lr, &cfg.decay_steps);
            opt.step(model.params_mut(), &grad, &mask, lr);
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { step, loss: f64::NAN });
            }
            trace.push(LossRecord {
                step,
                lr,
                loss: loss.value,
                cls: loss.cls,
                h: loss.h,
                alpha: loss.alpha,
                r: loss.r,
            });
        }
    }
    let final_loss = dataset_loss(&model, samples, &cfg.weights)?.value;
    if !final_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(FitResult {
        model,
        trace,
        initial_loss,
        final_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub policy: SelectionPolicy,
    pub nms_iou: f64,
    /// Per-class probabilities below this produce no detection.
    pub score_thresh: f64,
    /// Uniform noise added to the predicted α before selection, for
    /// studying robustness to offset errors. 0 disables it.
    pub alpha_noise: f64,
    pub noise_seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            policy: SelectionPolicy::default(),
            nms_iou: DEFAULT_NMS_IOU,
            score_thresh: 0.05,
            alpha_noise: 0.0,
            noise_seed: 0,
        }
    }
}

/// Head outputs for each proposal, decoded into per-class detections and
/// suppressed per class. Classes are 1-based.
pub fn infer(model: &HeadModel, proposals: &[Proposal], features: &[&[f64]], cfg: &InferConfig) -> Result<Vec<ScoredPoly>> {
    if proposals.len() != features.len() {
        return Err(Error::invalid("one feature vector per proposal required"));
    }
    if !(cfg.alpha_noise >= 0.0 && cfg.alpha_noise.is_finite()) {
        return Err(Error::config("alpha noise must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    let mut dets = Vec::new();
    for (p, x) in proposals.iter().zip(features) {
        let mut out = model.forward(x)?.output().clone();
        if cfg.alpha_noise > 0.0 {
            for a in &mut out.alpha {
                *a += rng.random_range(-cfg.alpha_noise..=cfg.alpha_noise);
            }
        }
        let probs = softmax(&out.logits);
        for (c, &score) in probs.iter().enumerate().skip(1) {
            if score < cfg.score_thresh {
                continue;
            }
            let d = out.deltas[c];
            let d = [
                d[0],
                d[1],
                d[2].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
                d[3].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
            ];
            let hbox = box_delta_decode(&d, &p.hbox)?;
            let rep = GlidingRep::new(hbox, out.alpha, out.r)?;
            dets.push(ScoredPoly {
                poly: select(&rep, &cfg.policy),
                score,
                class: c,
            });
        }
    }
    Ok(oriented_nms_per_class(&dets, cfg.nms_iou))
}

/// Runs `infer` image by image and names the classes.
pub fn infer_samples(
    model: &HeadModel,
    samples: &[Sample],
    class_names: &[String],
    cfg: &InferConfig,
) -> Result<PerImage<DetRecord>> {
    let mut out = PerImage::new();
    let mut start = 0;
    let mut image = 0;
    while start < samples.len() {
        let id = &samples[start].image_id;
        let end = start + samples[start..].iter().take_while(|s| &s.image_id == id).count();
        let group = &samples[start..end];
        let props: Vec<Proposal> = group.iter().map(|s| s.proposal).collect();
        let feats: Vec<&[f64]> = group.iter().map(|s| s.features.as_slice()).collect();
        let img_cfg = InferConfig {
            noise_seed: derive_seed(cfg.noise_seed, image),
            ..*cfg
        };
        image += 1;
        let dets = infer(model, &props, &feats, &img_cfg)?
            .into_iter()
            .map(|d| DetRecord {
                class: class_names[d.class - 1].clone(),
                score: d.score,
                quad: d.poly,
            })
            .collect();
        out.insert(id.clone(), dets);
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{mean_average_precision, ApMode};
    use crate::synth::{gen_dataset, SceneSpec};

    fn names() -> Vec<String> {
        vec!["plane".into(), "ship".into(), "vehicle".into()]
    }

    fn setup(n_images: usize, seed: u64) -> (PerImage<GtRecord>, Vec<Sample>, Featurizer) {
        let spec = SceneSpec {
            seed,
            ..SceneSpec::default()
        };
        let gts = gen_dataset(&spec, n_images).unwrap();
        let fz = Featurizer {
            n_classes: 3,
            noise: 0.05,
            width: spec.width,
            height: spec.height,
        };
        let samples = build_samples(&gts, &names(), &fz, &ProposalConfig::default(), seed).unwrap();
        (gts, samples, fz)
    }

    #[test]
    fn zero_steps_leaves_model_unchanged() {
        let (_, samples, fz) = setup(2, 1);
        let m = HeadModel::new(fz.dim(), 16, 3, 0).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let fit = sgd_fit(&m, &samples, &cfg).unwrap();
        assert_eq!(fit.model, m);
        assert!(fit.trace.is_empty());
        assert_eq!(fit.initial_loss, fit.final_loss);
    }

    #[test]
    fn no_positives_is_an_error() {
        let (_, samples, fz) = setup(1, 2);
        let bg: Vec<Sample> = samples.into_iter().filter(|s| s.class == 0).collect();
        let m = HeadModel::new(fz.dim(), 8, 3, 0).unwrap();
        assert!(matches!(sgd_fit(&m, &bg, &TrainConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let (_, samples, fz) = setup(2, 3);
        let m = HeadModel::new(fz.dim(), 16, 3, 0).unwrap();
        let cfg = TrainConfig {
            lr: 1e6,
            momentum: 0.0,
            steps: 200,
            ..TrainConfig::default()
        };
        match sgd_fit(&m, &samples, &cfg) {
            Err(Error::TrainingDiverged { step, .. }) => assert!(step < 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (_, samples, fz) = setup(3, 4);
        let m = HeadModel::new(fz.dim(), 16, 3, 9).unwrap();
        let cfg = TrainConfig {
            steps: 50,
            ..TrainConfig::default()
        };
        let a = sgd_fit(&m, &samples, &cfg).unwrap();
        let b = sgd_fit(&m, &samples, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 50);
        assert!(loss_trace_csv(&a.trace).starts_with("step,lr,loss,cls,h,alpha,r\n0,7.5e-3,"));
    }

    #[test]
    fn empty_proposals_give_no_detections() {
        let m = HeadModel::new(16, 8, 3, 0).unwrap();
        assert!(infer(&m, &[], &[], &InferConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn memorizes_a_single_object() {
        let spec = SceneSpec {
            count: (1, 1),
            horizontal_fraction: 0.0,
            seed: 5,
            ..SceneSpec::default()
        };
        let gts = gen_dataset(&spec, 1).unwrap();
        let fz = Featurizer {
            n_classes: 3,
            noise: 0.0,
            width: spec.width,
            height: spec.height,
        };
        let samples = build_samples(&gts, &names(), &fz, &ProposalConfig::default(), 5).unwrap();
        let m = HeadModel::new(fz.dim(), 32, 3, 1).unwrap();
        let cfg = TrainConfig {
            steps: 3000,
            decay_steps: vec![2500],
            lr: 0.05,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let fit = sgd_fit(&m, &samples, &cfg).unwrap();
        let infer_cfg = InferConfig {
            score_thresh: 0.5,
            ..InferConfig::default()
        };
        let dets = infer_samples(&fit.model, &samples, &names(), &infer_cfg).unwrap();
        let d = &dets["img_00000"];
        let g = &gts["img_00000"][0];
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].class, g.class);
        assert!(d[0].quad.iou(&g.quad) >= 0.9, "iou {}", d[0].quad.iou(&g.quad));
    }

    #[test]
    fn threshold_plumbing() {
        let (_, samples, fz) = setup(1, 6);
        let m = HeadModel::new(fz.dim(), 8, 3, 2).unwrap();
        let props: Vec<Proposal> = samples.iter().map(|s| s.proposal).collect();
        let feats: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let run = |t_r: f64| {
            let cfg = InferConfig {
                policy: SelectionPolicy::new(t_r).unwrap(),
                ..InferConfig::default()
            };
            infer(&m, &props, &feats, &cfg).unwrap()
        };
        // r is a sigmoid output, so strictly inside (0, 1): t_r = 0 always
        // picks the horizontal box, t_r = 1 never does.
        let oriented = run(1.0);
        let horizontal = run(0.0);
        assert!(!oriented.is_empty());
        for d in &horizontal {
            let b = d.poly.aabb().unwrap();
            assert!((d.poly.area() - b.area()).abs() < 1e-9 * b.area());
        }
        let again = run(1.0);
        assert_eq!(oriented, again);
    }

    #[test]
    fn training_beats_untrained_model() {
        let (_, train, fz) = setup(20, 7);
        let (test_gts, test, _) = setup(5, 8);
        let m = HeadModel::new(fz.dim(), 64, 3, 3).unwrap();
        let cfg = TrainConfig {
            steps: 1500,
            decay_steps: vec![1200],
            ..TrainConfig::default()
        };
        let fit = sgd_fit(&m, &train, &cfg).unwrap();
        assert!(fit.final_loss < fit.initial_loss);
        let ic = InferConfig::default();
        let before = mean_average_precision(&infer_samples(&m, &test, &names(), &ic).unwrap(), &test_gts, 0.5, ApMode::Voc07);
        let after =
            mean_average_precision(&infer_samples(&fit.model, &test, &names(), &ic).unwrap(), &test_gts, 0.5, ApMode::Voc07);
        assert!(after.map > before.map + 0.3, "before {} after {}", before.map, after.map);
    }
}
