use crate::tensor::ParamStore;
use crate::{AdError, Result};

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(AdError::Invalid {
                op: "adam_step",
                msg: "optimizer state does not match the parameter store".into(),
            });
        }
        for id in params.ids() {
            if params.get(id).grad().is_none() {
                return Err(AdError::MissingGrad(params.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let g = tensor.grad().expect("checked above").to_vec();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, w) in tensor.values_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over every gradient in the store.
pub fn global_grad_norm(params: &ParamStore) -> f64 {
    params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the scale factor applied (1.0 when no clipping happened).
pub fn clip_global_norm(params: &mut ParamStore, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(AdError::Invalid {
            op: "clip_global_norm",
            msg: format!("max_norm must be positive, got {max_norm}"),
        });
    }
    let norm = global_grad_norm(params);
    if norm <= max_norm || !norm.is_finite() {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for t in params.tensors_mut() {
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(scale)
}

/// Halves (by default) the learning rate after `patience` epochs without
/// improvement of the monitored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    stale: usize,
}

impl Default for ReduceOnPlateau {
    fn default() -> Self {
        Self::new(0.5, 5)
    }
}

impl ReduceOnPlateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            min_lr: 1e-6,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feeds one epoch's monitored loss; returns true if `lr` was reduced.
    pub fn observe(&mut self, loss: f64, lr: &mut f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale > self.patience {
            self.stale = 0;
            let next = (*lr * self.factor).max(self.min_lr);
            let changed = next < *lr;
            *lr = next;
            return changed;
        }
        false
    }
}
