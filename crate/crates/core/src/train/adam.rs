use crate::arch::{EntryKind, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::AdamConfig;

/// First and second moments for every trainable entry of one model.
/// Buffers carry empty moment vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>, cfg: AdamConfig) -> Self {
        let zeros = |e: &crate::arch::Entry<T>| match e.kind {
            EntryKind::Param => vec![T::zero(); e.tensor.numel()],
            EntryKind::Buffer => Vec::new(),
        };
        OptimizerState {
            cfg,
            step: 0,
            m: params.entries().iter().map(zeros).collect(),
            v: params.entries().iter().map(zeros).collect(),
        }
    }

    pub fn check_layout(&self, params: &ModelParams<T>) -> Result<()> {
        let e = params.entries();
        if self.m.len() != e.len() || self.v.len() != e.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} entries, model has {}",
                self.m.len(),
                e.len()
            )));
        }
        for (i, entry) in e.iter().enumerate() {
            let want = match entry.kind {
                EntryKind::Param => entry.tensor.numel(),
                EntryKind::Buffer => 0,
            };
            if self.m[i].len() != want || self.v[i].len() != want {
                return Err(Error::shape(format!("optimizer moments for {} have the wrong size", entry.name)));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Missing gradients count as zero. If any gradient is non-finite nothing is
/// changed and the offending parameter is named.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, state: &mut OptimizerState<T>, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid(format!("learning rate {lr} must be positive")));
    }
    state.check_layout(params)?;
    for e in params.entries() {
        if e.kind == EntryKind::Param && e.tensor.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of {}", e.name)));
        }
    }
    state.step += 1;
    let c = state.cfg;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
    // lr · m̂ / (√v̂ + ε) with m̂ = m / bc1, v̂ = v / bc2
    let step_size = T::lit(lr / bc1);
    let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
    let eps = T::lit(c.eps);
    for (i, e) in params.entries_mut().iter_mut().enumerate() {
        if e.kind != EntryKind::Param {
            continue;
        }
        let grad = e.tensor.grad().map(|g| g.to_vec());
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data = e.tensor.data_mut();
        for j in 0..data.len() {
            let g = grad.as_ref().map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + one_b1 * g;
            v[j] = b2 * v[j] + one_b2 * g * g;
            data[j] -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}
