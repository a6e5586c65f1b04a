use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How masked element losses are reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean over unmasked elements.
    #[default]
    Mean,
    /// Plain sum over unmasked elements.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Peak of the one-cycle schedule.
    pub peak_lr: f64,
    pub smooth_l1_beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Iterations from the schedule floor to its peak.
    pub scheduler_step: usize,
    /// Validate every this many epochs (and always after the last one).
    pub validation_interval: usize,
    pub seed: u64,
    /// Parameter-name prefixes excluded from optimization.
    pub freeze: Vec<String>,
    pub loss_reduction: Reduction,
    /// Weight of the stop-token loss; only used while `gate.` is trainable.
    pub gate_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 0.002,
            smooth_l1_beta: 1.0,
            batch_size: 8,
            epochs: 500,
            scheduler_step: 4000,
            validation_interval: 5,
            seed: 0,
            freeze: Vec::new(),
            loss_reduction: Reduction::Mean,
            gate_weight: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("train config: {m}")));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if !(self.smooth_l1_beta > 0.0) {
            return bad("smooth_l1_beta must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.scheduler_step == 0 || self.validation_interval == 0 {
            return bad("batch_size, epochs, scheduler_step and validation_interval must be positive");
        }
        if !(self.gate_weight >= 0.0) {
            return bad("gate_weight must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Whether the stop-token layer receives gradient.
    pub fn gate_trained(&self) -> bool {
        !self.is_frozen("gate.weight")
    }
}
