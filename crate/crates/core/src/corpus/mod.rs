//! Label generation: OpenFace CSV + transcript in, pose-invariant 80 fps
//! displacement trajectories out.
//!
//! Pipeline per clip: [`parse_openface_csv`] → [`filter_clip`] →
//! [`reproject_frame`] → [`resample_80fps`] → [`speaker_reference`] →
//! [`normalize_clip`] → [`encode_text`]. [`build_dataset`] runs the whole
//! chain over a corpus directory.

mod charset;
mod dataset;
mod filter;
mod normalize;
mod openface;
mod pose;
mod resample;
pub mod synth;
mod transcript;

use serde::{Deserialize, Serialize};

pub use charset::{encode_text, Charset};
pub use dataset::{build_dataset, ClipIssue, Dataset, PrepareConfig, PrepareReport, Split, SPEAKERS_MANIFEST};
pub use filter::{filter_clip, FilterOutcome, FrameIssue, Rejection, DEFAULT_CONFIDENCE_THRESHOLD};
pub use normalize::{denormalize, normalize_clip, speaker_reference, Displacements};
pub use openface::{parse_openface_csv, write_openface_csv};
pub use pose::{apply_pose, reproject_frame, reproject_points, rotation_matrix, snap_mm};
pub use resample::{resample_80fps, TimedRows};
pub use synth::synth_corpus;
pub use transcript::parse_transcript;

/// Number of points in the OpenFace facial landmark scheme.
pub const NUM_LANDMARKS: usize = 68;

/// First lip landmark (outer lip starts at 48, inner lip at 60).
pub const LIP_START: usize = 48;

/// A 3D position in millimetres.
pub type Point = [f64; 3];

/// Head pose estimated by OpenFace: translation in millimetres, rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseParams {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl PoseParams {
    pub fn is_finite(&self) -> bool {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn translation(&self) -> Point {
        [self.tx, self.ty, self.tz]
    }
}

/// One OpenFace output row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub timestamp: f64,
    pub confidence: f64,
    pub success: bool,
    pub pose: PoseParams,
    /// Landmarks 0..67 in camera coordinates.
    pub points: Vec<Point>,
}

/// One transcribed clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub speaker_id: String,
    pub transcript: String,
    pub source_fps: f64,
    pub frames: Vec<RawFrame>,
}

impl ClipRecord {
    /// Checks the record-level invariants.
    pub fn validate(&self) -> crate::Result<()> {
        if self.transcript.trim().is_empty() {
            return Err(crate::Error::Contract(format!(
                "clip {}: empty transcript",
                self.clip_id
            )));
        }
        if self.frames.len() < 2 {
            return Err(crate::Error::InsufficientData(format!(
                "clip {}: {} frame(s), need at least 2",
                self.clip_id,
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.points.len() != NUM_LANDMARKS {
                return Err(crate::Error::Format(format!(
                    "clip {} frame {i}: {} landmarks, expected {NUM_LANDMARKS}",
                    self.clip_id,
                    f.points.len()
                )));
            }
        }
        Ok(())
    }

    /// Estimated source frame rate from the median timestamp spacing.
    pub fn estimate_fps(frames: &[RawFrame]) -> f64 {
        let mut gaps: Vec<f64> = frames
            .windows(2)
            .map(|w| w[1].timestamp - w[0].timestamp)
            .filter(|g| *g > 0.0)
            .collect();
        if gaps.is_empty() {
            return 0.0;
        }
        gaps.sort_by(f64::total_cmp);
        1.0 / gaps[gaps.len() / 2]
    }
}

/// Per-speaker rest shape subtracted from every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub speaker_id: String,
    pub points: Vec<Point>,
}

impl ReferenceFrame {
    pub fn zeros(speaker_id: impl Into<String>) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            points: vec![[0.0; 3]; NUM_LANDMARKS],
        }
    }
}

/// Which landmarks a model regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkSet {
    /// Landmarks 48..67: 20 points, 60 values per frame.
    #[default]
    Lips,
    /// All 68 points, 204 values per frame.
    All,
}

impl LandmarkSet {
    pub fn indices(self) -> std::ops::Range<usize> {
        match self {
            LandmarkSet::Lips => LIP_START..NUM_LANDMARKS,
            LandmarkSet::All => 0..NUM_LANDMARKS,
        }
    }

    pub fn len(self) -> usize {
        self.indices().len()
    }

    pub fn width(self) -> usize {
        3 * self.len()
    }

    pub fn from_width(width: usize) -> Option<Self> {
        match width {
            60 => Some(LandmarkSet::Lips),
            204 => Some(LandmarkSet::All),
            _ => None,
        }
    }
}

impl std::fmt::Display for LandmarkSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LandmarkSet::Lips => "lips",
            LandmarkSet::All => "all",
        })
    }
}

impl std::str::FromStr for LandmarkSet {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "lips" => Ok(LandmarkSet::Lips),
            "all" => Ok(LandmarkSet::All),
            other => Err(crate::Error::Usage(format!(
                "unknown landmark set {other:?} (expected lips or all)"
            ))),
        }
    }
}

/// A training example: token ids plus its reference-subtracted 80 fps trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedClip {
    pub clip_id: String,
    pub speaker_id: String,
    pub tokens: Vec<usize>,
    pub displacements: Displacements,
    pub reference: ReferenceFrame,
}

impl NormalizedClip {
    pub fn frame_rate(&self) -> f64 {
        crate::FRAME_RATE
    }

    pub fn num_frames(&self) -> usize {
        self.displacements.frames.rows()
    }
}
