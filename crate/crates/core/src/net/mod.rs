//! Tacotron-2 style sequence-to-sequence network mapping characters to
//! landmark displacement frames.
//!
//! Parameters live in a [`ParamStore`](crate::autodiff::ParamStore) under
//! stable dotted names (`encoder.*`, `attention.*`, `prenet.*`,
//! `decoder.*`, `gate.*`, `postnet.*`), so freezing and partial loading
//! work by name prefix. The forward functions are generic over the scalar
//! type and record onto a [`Graph`](crate::autodiff::Graph).

mod checkpoint;
mod config;
mod layout;
mod model;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, load_partial, save_checkpoint, Checkpoint, CheckpointMeta, PartialLoadReport,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, Preset};
pub use layout::init_params;
pub use model::{
    apply_bn_updates, attention_step, decoder_step, encoder_forward, forward_padded, forward_teacher_forced, infer,
    initial_state, postnet_forward, prepare_memory, BnUpdate, DecoderState, InferOptions, Inference, Memory, Outputs,
    Pass, StepOutput, BN_EPS, BN_MOMENTUM,
};

/// Prefixes frozen when transferring a pretrained encoder and stop-token layer.
pub const TRANSFER_PREFIXES: [&str; 2] = ["encoder.", "gate."];

#[cfg(test)]
mod tests;
