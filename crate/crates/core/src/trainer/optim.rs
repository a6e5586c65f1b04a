use std::collections::BTreeMap;

use crate::autodiff::{GradStore, ParamKind, ParamStore, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, kept in f64.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update. Frozen parameters and buffers are
/// skipped entirely, even if a gradient is present.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &GradStore<T>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name:?}")))?;
        if p.value.shape() != g.shape() {
            return Err(Error::shape(
                "adam",
                format!("{name}: parameter {:?}, gradient {:?}", p.value.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        if p.frozen || p.kind != ParamKind::Trainable {
            continue;
        }
        let Some(g) = grads.get(name) else { continue };
        let n = g.numel();
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        for (((w, &gi), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gi = gi.as_f64();
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            *w = T::of(w.as_f64() - update);
        }
    }
    Ok(())
}

/// Triangular one-cycle schedule: `peak / 25` at iteration 0, linear rise
/// to `peak` at `step`, linear fall back to `peak / 25` at `2 · step`, held
/// there afterwards. Endpoints are exact.
pub fn one_cycle_lr(iteration: usize, peak: f64, step: usize) -> f64 {
    let base = peak / 25.0;
    let step = step.max(1);
    if iteration <= step {
        let f = iteration as f64 / step as f64;
        base * (1.0 - f) + peak * f
    } else if iteration <= 2 * step {
        let f = (iteration - step) as f64 / step as f64;
        peak * (1.0 - f) + base * f
    } else {
        base
    }
}
