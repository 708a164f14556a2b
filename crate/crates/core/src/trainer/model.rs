use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{l_total, BatchLabels, HeadOutput, LossWeights, RegressionTarget, TotalLoss};

const CHECKPOINT_FORMAT: &str = "gliding-vertex-head";
const CHECKPOINT_VERSION: u32 = 1;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Two-layer tanh network producing the detection head outputs.
///
/// Output layout: `K + 1` logits, `4 (K + 1)` box deltas, 4 α pre-activations,
/// 1 r pre-activation. Class 0 is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    n_in: usize,
    n_hidden: usize,
    n_classes: usize,
    /// W1 (hidden x in), b1, W2 (out x hidden), b2, row-major.
    params: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    x: Vec<f64>,
    h: Vec<f64>,
    out: HeadOutput,
}

impl Activations {
    pub fn output(&self) -> &HeadOutput {
        &self.out
    }
}

impl HeadModel {
    pub fn new(n_in: usize, n_hidden: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if n_in == 0 || n_hidden == 0 || n_classes == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        let mut m = HeadModel {
            n_in,
            n_hidden,
            n_classes,
            params: Vec::new(),
        };
        m.params = vec![0.0; m.n_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d1 = Normal::new(0.0, 1.0 / (n_in as f64).sqrt()).expect("positive std");
        let d2 = Normal::new(0.0, 0.1 / (n_hidden as f64).sqrt()).expect("positive std");
        let (w1, _, w2, _) = m.offsets();
        for p in &mut m.params[w1..w1 + n_hidden * n_in] {
            *p = d1.sample(&mut rng);
        }
        let n_out = m.n_out();
        for p in &mut m.params[w2..w2 + n_out * n_hidden] {
            *p = d2.sample(&mut rng);
        }
        Ok(m)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    /// Foreground classes.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_out(&self) -> usize {
        5 * (self.n_classes + 1) + 5
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden * self.n_in + self.n_hidden + self.n_out() * self.n_hidden + self.n_out()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = w1 + self.n_hidden * self.n_in;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_out() * self.n_hidden;
        (w1, b1, w2, b2)
    }

    /// True for weight entries, false for biases; weight decay uses this.
    pub fn decay_mask(&self) -> Vec<bool> {
        let (_, b1, w2, b2) = self.offsets();
        (0..self.n_params())
            .map(|i| i < b1 || (w2..b2).contains(&i))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activations> {
        if x.len() != self.n_in {
            return Err(Error::invalid(format!(
                "feature length {} does not match model input {}",
                x.len(),
                self.n_in
            )));
        }
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let h: Vec<f64> = (0..self.n_hidden)
            .map(|j| {
                let row = &p[w1 + j * self.n_in..w1 + (j + 1) * self.n_in];
                let z = row.iter().zip(x).fold(p[b1 + j], |acc, (w, v)| acc + w * v);
                z.tanh()
            })
            .collect();
        let z: Vec<f64> = (0..self.n_out())
            .map(|k| {
                let row = &p[w2 + k * self.n_hidden..w2 + (k + 1) * self.n_hidden];
                row.iter().zip(&h).fold(p[b2 + k], |acc, (w, v)| acc + w * v)
            })
            .collect();
        let kc = self.n_classes + 1;
        let logits = z[..kc].to_vec();
        let deltas = (0..kc)
            .map(|c| std::array::from_fn(|i| z[kc + 4 * c + i]))
            .collect();
        let base = 5 * kc;
        let alpha = std::array::from_fn(|i| sigmoid(z[base + i]));
        let r = sigmoid(z[base + 4]);
        Ok(Activations {
            x: x.to_vec(),
            h,
            out: HeadOutput {
                logits,
                deltas,
                alpha,
                r,
            },
        })
    }

    /// Accumulates d loss / d params into `grad` given d loss / d outputs.
    pub fn backward(&self, act: &Activations, g_out: &HeadOutput, grad: &mut [f64]) {
        let (w1, b1, w2, b2) = self.offsets();
        let kc = self.n_classes + 1;
        let mut gz = vec![0.0; self.n_out()];
        gz[..kc].copy_from_slice(&g_out.logits);
        for c in 0..kc {
            gz[kc + 4 * c..kc + 4 * c + 4].copy_from_slice(&g_out.deltas[c]);
        }
        let base = 5 * kc;
        for i in 0..4 {
            let s = act.out.alpha[i];
            gz[base + i] = g_out.alpha[i] * s * (1.0 - s);
        }
        let s = act.out.r;
        gz[base + 4] = g_out.r * s * (1.0 - s);

        let mut gh = vec![0.0; self.n_hidden];
        for (k, &g) in gz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2 + k] += g;
            let row = w2 + k * self.n_hidden;
            for j in 0..self.n_hidden {
                grad[row + j] += g * act.h[j];
                gh[j] += g * self.params[row + j];
            }
        }
        for j in 0..self.n_hidden {
            let gpre = gh[j] * (1.0 - act.h[j] * act.h[j]);
            grad[b1 + j] += gpre;
            let row = w1 + j * self.n_in;
            for (i, xi) in act.x.iter().enumerate() {
                grad[row + i] += gpre * xi;
            }
        }
    }

    /// Objective over a batch and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        features: &[&[f64]],
        targets: &[RegressionTarget],
        labels: &BatchLabels,
        weights: &LossWeights,
    ) -> Result<(TotalLoss, Vec<f64>)> {
        let acts: Vec<Activations> = features.iter().map(|x| self.forward(x)).collect::<Result<_>>()?;
        let outs: Vec<HeadOutput> = acts.iter().map(|a| a.out.clone()).collect();
        let loss = l_total(&outs, targets, labels, weights)?;
        let mut grad = vec![0.0; self.n_params()];
        for (a, g) in acts.iter().zip(&loss.grads) {
            self.backward(a, g, &mut grad);
        }
        Ok((loss, grad))
    }

    pub fn to_json(&self, class_names: &[String]) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            class_names: class_names.to_vec(),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&ck).expect("checkpoint serializes") + "\n"
    }

    /// Returns the model and its class names.
    pub fn from_json(text: &str) -> Result<(HeadModel, Vec<String>)> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let m = ck.model;
        if m.n_in == 0 || m.n_hidden == 0 || m.n_classes == 0 || m.params.len() != m.n_params() {
            return Err(Error::Checkpoint("parameter count does not match dimensions".into()));
        }
        if !m.params.iter().all(|p| p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        if ck.class_names.len() != m.n_classes {
            return Err(Error::Checkpoint("class name count does not match the model".into()));
        }
        Ok((m, ck.class_names))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    class_names: Vec<String>,
    model: HeadModel,
}
