use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = m v + (g + wd w)`, `w -= lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(n_params: usize, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::config("weight decay must be >= 0"));
        }
        Ok(Sgd {
            momentum,
            weight_decay,
            velocity: vec![0.0; n_params],
        })
    }

    /// `decay[i]` selects which parameters receive weight decay.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], decay: &[bool], lr: f64) {
        assert_eq!(params.len(), self.velocity.len());
        assert_eq!(grad.len(), params.len());
        for i in 0..params.len() {
            let wd = if decay[i] { self.weight_decay * params[i] } else { 0.0 };
            self.velocity[i] = self.momentum * self.velocity[i] + grad[i] + wd;
            params[i] -= lr * self.velocity[i];
        }
    }
}

/// Base rate divided by 10 at every decay step already reached.
pub fn lr_at(step: usize, base: f64, decay_steps: &[usize]) -> f64 {
    let n = decay_steps.iter().filter(|&&s| step >= s).count();
    base * 0.1f64.powi(n as i32)
}
