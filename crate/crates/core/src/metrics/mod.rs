//! Millimetre error statistics between trajectories, and trajectory export.

mod export;
mod report;

pub use export::{export_trajectory, import_csv, read_csv, write_csv, write_svg, ExportFormat, CSV_HEADER};
pub use report::{compare_report, manhattan_error, ComparisonReport, ErrorReport, COMPARISON_HEADER};

use crate::corpus::{denormalize, LandmarkSet, ReferenceFrame, LIP_START, NUM_LANDMARKS};
use crate::{Error, FrameMatrix, Result};

/// Absolute landmark positions in millimetres, one row per 80 fps frame.
///
/// Row layout is `x, y, z` for each entry of `landmarks`, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    landmarks: Vec<usize>,
    frames: FrameMatrix,
}

impl Trajectory {
    pub fn new(landmarks: Vec<usize>, frames: FrameMatrix) -> Result<Self> {
        if landmarks.is_empty() {
            return Err(Error::Contract("a trajectory needs at least one landmark".into()));
        }
        if let Some(&k) = landmarks.iter().find(|&&k| k >= NUM_LANDMARKS) {
            return Err(Error::Contract(format!(
                "landmark index {k} outside 0..{NUM_LANDMARKS}"
            )));
        }
        let mut sorted = landmarks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != landmarks.len() {
            return Err(Error::Contract("duplicate landmark index in trajectory".into()));
        }
        if frames.width() != 3 * landmarks.len() {
            return Err(Error::shape(
                "trajectory",
                format!(
                    "row width {} does not match {} landmarks",
                    frames.width(),
                    landmarks.len()
                ),
            ));
        }
        Ok(Self { landmarks, frames })
    }

    pub fn from_set(set: LandmarkSet, frames: FrameMatrix) -> Result<Self> {
        Self::new(set.indices().collect(), frames)
    }

    /// Adds `reference` back to decoder displacements.
    pub fn from_displacements(
        displacements: &FrameMatrix,
        reference: &ReferenceFrame,
        set: LandmarkSet,
    ) -> Result<Self> {
        Self::from_set(set, denormalize(displacements, reference, set)?)
    }

    pub fn landmarks(&self) -> &[usize] {
        &self.landmarks
    }

    pub fn frames(&self) -> &FrameMatrix {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    /// Position of landmark slot `j` in frame `t`.
    pub fn point(&self, t: usize, j: usize) -> [f64; 3] {
        let r = &self.frames.row(t)[3 * j..3 * j + 3];
        [r[0], r[1], r[2]]
    }

    /// The given landmarks, in the given order.
    pub fn select(&self, landmarks: &[usize]) -> Result<Self> {
        let slots: Vec<usize> = landmarks
            .iter()
            .map(|k| {
                self.landmarks
                    .iter()
                    .position(|l| l == k)
                    .ok_or_else(|| Error::Contract(format!("landmark {k} is not in this trajectory")))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(self.num_frames() * 3 * slots.len());
        for row in self.frames.iter_rows() {
            for &j in &slots {
                data.extend_from_slice(&row[3 * j..3 * j + 3]);
            }
        }
        Self::new(landmarks.to_vec(), FrameMatrix::new(3 * slots.len(), data)?)
    }

    /// Landmarks 48..67 only.
    pub fn lips(&self) -> Result<Self> {
        self.select(&(LIP_START..NUM_LANDMARKS).collect::<Vec<_>>())
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            landmarks: self.landmarks.clone(),
            frames: self.frames.truncated(n),
        }
    }

    /// Every coordinate multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let data = self.frames.as_slice().iter().map(|v| v * s).collect();
        Self {
            landmarks: self.landmarks.clone(),
            frames: FrameMatrix::new(self.frames.width(), data).expect("same width"),
        }
    }
}

#[cfg(test)]
mod tests;
