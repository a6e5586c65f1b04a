use serde::Serialize;

use crate::{Error, Result};

fn check(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<usize> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "loss",
            format!("pred {}, target {}, mask {}", pred.len(), target.len(), mask.len()),
        ));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::Contract("loss over an empty mask".into())),
        n => Ok(n),
    }
}

/// Smooth-L1 (Huber) loss for a single difference.
pub fn smooth_l1_elem(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

/// Mean smooth-L1 over unmasked elements.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64, mask: &[bool]) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Contract(format!("smooth-L1 beta must be positive, got {beta}")));
    }
    let n = check(pred, target, mask)?;
    let s: f64 = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, t), _)| smooth_l1_elem(p - t, beta))
        .sum();
    Ok(s / n as f64)
}

/// Mean squared error over unmasked elements.
pub fn mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let n = check(pred, target, mask)?;
    let s: f64 = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, t), _)| (p - t) * (p - t))
        .sum();
    Ok(s / n as f64)
}

/// Per-term values of one composite loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub decoder: f64,
    pub postnet: Option<f64>,
    /// Weighted stop-token term, when the gate is trained.
    pub gate: Option<f64>,
    pub total: f64,
}
