//! Text-driven lip landmark trajectory synthesis.
//!
//! The crate is organised the way data flows through it:
//!
//! * [`corpus`] turns OpenFace landmark CSVs and transcripts into pose-invariant,
//!   80 fps, reference-subtracted displacement trajectories.
//! * [`autodiff`] is a small reverse-mode engine with just the primitives the network needs.
//! * [`net`] is the attention-based sequence-to-sequence landmark decoder.
//! * [`trainer`] holds losses, Adam, the one-cycle schedule, the training loop,
//!   encoder transfer and the Pre-Net/Post-Net ablation harness.
//! * [`metrics`] evaluates trajectories in millimetres and exports them.

pub mod autodiff;
mod bytes;
pub mod corpus;
pub mod error;
pub mod frames;
pub mod metrics;
pub mod net;
pub mod trainer;

pub use error::{Error, Result};
pub use frames::FrameMatrix;

/// Output frame rate of every trajectory in the crate.
pub const FRAME_RATE: f64 = 80.0;

/// Duration of one decoder step in seconds.
pub const FRAME_SECONDS: f64 = 1.0 / FRAME_RATE;
