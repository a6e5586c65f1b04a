//! Losses, Adam, the one-cycle schedule, padded batching and the
//! teacher-forced training loop, plus the transfer and ablation drivers.

mod batch;
mod config;
mod experiments;
mod loss;
mod optim;
mod train;

pub use batch::{make_batches, sequential_batches, Batch};
pub use config::{Reduction, TrainConfig};
pub use experiments::{
    ablate, pretrain_then_transfer, transfer_init, AblationRow, AblationTable, TransferOutcome, ABLATION_CONFIGS,
    ABLATION_EPOCH_CAP, ABLATION_HEADER, ABLATION_REFERENCE_LOSSES,
};
pub use loss::{mse, smooth_l1, smooth_l1_elem, LossBreakdown};
pub use optim::{adam_step, one_cycle_lr, AdamConfig, AdamState};
pub use train::{
    batch_loss, evaluate, train, BestRecord, HistoryRow, TrainHistory, TrainOptions, TrainOutcome, BEST_CHECKPOINT,
    HISTORY_FILE, HISTORY_HEADER, LAST_CHECKPOINT,
};

#[cfg(test)]
mod tests;
