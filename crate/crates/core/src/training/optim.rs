use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Clamp applied to probabilities inside logarithms.
pub const BCE_EPS: f64 = 1e-12;

/// Mean binary cross-entropy over positions where `mask` is set.
pub fn bce_loss(predictions: &[f64], targets: &[f64], mask: &[bool]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.len() != mask.len() {
        return Err(Error::shape(
            "bce_loss",
            &[predictions.len()],
            &[targets.len(), mask.len()],
        ));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for ((&p, &y), &m) in predictions.iter().zip(targets).zip(mask) {
        if m {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Validation("loss mask selects no positions".into()));
    }
    Ok(total / n as f64)
}

/// `peak_lr · min(step / warmup, sqrt(warmup / step))`: linear warmup to
/// `peak_lr` at `step = warmup`, then inverse square-root decay.
pub fn noam_lr(step: u64, warmup: u64, peak_lr: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    peak_lr * (s / w).min((w / s).sqrt())
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[grads.len(), self.m.len()]));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::shape("adam_step", params[i].shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; a
/// nonpositive `max_norm` disables clipping. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
