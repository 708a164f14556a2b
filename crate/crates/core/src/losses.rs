//! R-CNN head objective: softmax classification plus smooth-L1 regression of
//! the box deltas, the four gliding ratios and the obliquity factor.
//!
//! ```text
//! L     = 1/N_cls * sum_i L_cls + 1/N_reg * sum_i p_i * L_reg
//! L_reg = lambda1 * L_h + lambda2 * L_alpha + lambda3 * L_r
//! ```
//!
//! Every loss comes with its analytic gradient with respect to the
//! predictions it consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HBox;

/// Fixed-order pairwise summation, so batch reductions are bit-stable.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Value and derivative of smooth-L1 at residual `d`.
pub fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Regression deltas of `gt` relative to `anchor`.
pub fn box_delta_encode(gt: &HBox, anchor: &HBox) -> Result<[f64; 4]> {
    for b in [gt, anchor] {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::invalid("box sizes must be positive"));
        }
    }
    Ok([
        (gt.x - anchor.x) / anchor.w,
        (gt.y - anchor.y) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.h / anchor.h).ln(),
    ])
}

pub fn box_delta_decode(deltas: &[f64; 4], anchor: &HBox) -> Result<HBox> {
    if !(anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(Error::invalid("anchor sizes must be positive"));
    }
    HBox::new(
        anchor.x + deltas[0] * anchor.w,
        anchor.y + deltas[1] * anchor.h,
        anchor.w * deltas[2].exp(),
        anchor.h * deltas[3].exp(),
    )
}

/// Sum of smooth-L1 over four components, with gradient.
pub fn smooth_l1_4(pred: &[f64; 4], target: &[f64; 4], beta: f64) -> (f64, [f64; 4]) {
    let mut grad = [0.0; 4];
    let mut loss = 0.0;
    for i in 0..4 {
        let (l, g) = smooth_l1(pred[i] - target[i], beta);
        loss += l;
        grad[i] = g;
    }
    (loss, grad)
}

/// Horizontal-box loss over the four deltas.
pub fn l_h(pred: &[f64; 4], target: &[f64; 4], beta: f64) -> (f64, [f64; 4]) {
    smooth_l1_4(pred, target, beta)
}

/// Gliding-ratio loss.
pub fn l_alpha(pred: &[f64; 4], target: &[f64; 4], beta: f64) -> (f64, [f64; 4]) {
    smooth_l1_4(pred, target, beta)
}

/// Obliquity loss.
pub fn l_r(pred: f64, target: f64, beta: f64) -> (f64, f64) {
    smooth_l1(pred - target, beta)
}

/// Softmax cross-entropy against `class`; the gradient is `softmax - onehot`.
pub fn l_cls(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if class >= logits.len() {
        return Err(Error::invalid(format!(
            "class {class} out of range for {} logits",
            logits.len()
        )));
    }
    if !logits.iter().all(|l| l.is_finite()) {
        return Err(Error::invalid("non-finite logits"));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - logits[class];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[class] -= 1.0;
    Ok((loss, grad))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub deltas: [f64; 4],
    pub alpha: [f64; 4],
    pub r: f64,
}

impl RegressionTarget {
    pub fn new(deltas: [f64; 4], alpha: [f64; 4], r: f64) -> Result<Self> {
        if !deltas.iter().chain(&alpha).chain([&r]).all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite regression target"));
        }
        if !alpha.iter().chain([&r]).all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("alpha and r targets must lie in [0, 1]"));
        }
        Ok(RegressionTarget { deltas, alpha, r })
    }

    /// Placeholder for background proposals, which carry no regression loss.
    pub fn background() -> Self {
        RegressionTarget {
            deltas: [0.0; 4],
            alpha: [0.0; 4],
            r: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, beta: f64) -> Result<Self> {
        if ![lambda1, lambda2, lambda3].iter().all(|l| *l >= 0.0 && l.is_finite()) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("smooth-L1 beta must be positive"));
        }
        Ok(LossWeights {
            lambda1,
            lambda2,
            lambda3,
            beta,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 16.0,
            beta: 1.0,
        }
    }
}

/// Per-proposal class labels and positive flags for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLabels {
    classes: Vec<usize>,
    positive: Vec<bool>,
}

impl BatchLabels {
    /// Positives are exactly the proposals with a foreground class.
    pub fn from_classes(classes: Vec<usize>) -> Self {
        let positive = classes.iter().map(|&c| c > 0).collect();
        BatchLabels { classes, positive }
    }

    pub fn new(classes: Vec<usize>, positive: Vec<bool>) -> Result<Self> {
        if classes.len() != positive.len() {
            return Err(Error::invalid("classes and positive flags differ in length"));
        }
        if classes.iter().zip(&positive).any(|(&c, &p)| p && c == 0) {
            return Err(Error::invalid("a positive proposal has the background class"));
        }
        Ok(BatchLabels { classes, positive })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn positive(&self) -> &[bool] {
        &self.positive
    }

    pub fn n_cls(&self) -> usize {
        self.classes.len()
    }

    pub fn n_reg(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }
}

/// Head predictions for one proposal. `alpha` and `r` are post-sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: Vec<f64>,
    /// One delta vector per class, background included.
    pub deltas: Vec<[f64; 4]>,
    pub alpha: [f64; 4],
    pub r: f64,
}

impl HeadOutput {
    pub fn zeros_like(&self) -> HeadOutput {
        HeadOutput {
            logits: vec![0.0; self.logits.len()],
            deltas: vec![[0.0; 4]; self.deltas.len()],
            alpha: [0.0; 4],
            r: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub cls: f64,
    pub h: f64,
    pub alpha: f64,
    pub r: f64,
    /// Gradient of `value` with respect to every prediction, same layout as the input.
    pub grads: Vec<HeadOutput>,
}

/// Full head objective over a mini-batch.
///
/// `h`, `alpha` and `r` in the result are the per-term averages over positives
/// before weighting. The box loss uses the delta slot of the ground-truth class.
pub fn l_total(
    outputs: &[HeadOutput],
    targets: &[RegressionTarget],
    labels: &BatchLabels,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    let n = labels.n_cls();
    if outputs.len() != n || targets.len() != n {
        return Err(Error::invalid(format!(
            "batch length mismatch: {} outputs, {} targets, {} labels",
            outputs.len(),
            targets.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let n_reg = labels.n_reg();
    let inv_cls = 1.0 / n as f64;
    let inv_reg = if n_reg > 0 { 1.0 / n_reg as f64 } else { 0.0 };
    let beta = weights.beta;

    let mut cls_terms = Vec::with_capacity(n);
    let mut h_terms = Vec::with_capacity(n);
    let mut a_terms = Vec::with_capacity(n);
    let mut r_terms = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);

    for i in 0..n {
        let out = &outputs[i];
        let class = labels.classes[i];
        if out.deltas.len() != out.logits.len() {
            return Err(Error::invalid("delta slots must match the number of logits"));
        }
        let (lc, gc) = l_cls(&out.logits, class)?;
        cls_terms.push(lc);
        let mut g = out.zeros_like();
        for (gl, v) in g.logits.iter_mut().zip(gc) {
            *gl = v * inv_cls;
        }
        if labels.positive[i] {
            let t = &targets[i];
            let (lh, gh) = l_h(&out.deltas[class], &t.deltas, beta);
            let (la, ga) = l_alpha(&out.alpha, &t.alpha, beta);
            let (lr, gr) = l_r(out.r, t.r, beta);
            h_terms.push(lh);
            a_terms.push(la);
            r_terms.push(lr);
            for k in 0..4 {
                g.deltas[class][k] = weights.lambda1 * gh[k] * inv_reg;
                g.alpha[k] = weights.lambda2 * ga[k] * inv_reg;
            }
            g.r = weights.lambda3 * gr * inv_reg;
        }
        grads.push(g);
    }

    let cls = pairwise_sum(&cls_terms) * inv_cls;
    let h = pairwise_sum(&h_terms) * inv_reg;
    let alpha = pairwise_sum(&a_terms) * inv_reg;
    let r = pairwise_sum(&r_terms) * inv_reg;
    let value = cls + weights.lambda1 * h + weights.lambda2 * alpha + weights.lambda3 * r;
    Ok(TotalLoss {
        value,
        cls,
        h,
        alpha,
        r,
        grads,
    })
}
