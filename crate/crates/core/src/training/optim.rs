use crate::bijectors::ParamStore;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `lr0 · ½(1 + cos(π · min(step, total) / total))`.
pub fn cosine_schedule(lr0: f64, step: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs total > 0".into()));
    }
    let frac = step.min(total) as f64 / total as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Scales `grads` in place so their joint L2 norm is at most `max`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max {
        let k = max / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * k);
        }
    }
    norm
}

/// Adam over the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.value.raw_dim())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One descent step along `grads`, which are aligned with the store's
    /// entries. Frozen entries are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || store.entries().len() != self.m.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let ids: Vec<_> = store.trainable_ids();
        for id in ids {
            let i = id.0;
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            if g.dim() != m.dim() {
                return Err(Error::Shape(format!("gradient {i} has shape {:?}, expected {:?}", g.dim(), m.dim())));
            }
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}
