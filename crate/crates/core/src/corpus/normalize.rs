use serde::{Deserialize, Serialize};

use super::{pose::snap_mm, LandmarkSet, ReferenceFrame, TimedRows, NUM_LANDMARKS};
use crate::{Error, FrameMatrix, Result};

/// Reference-subtracted trajectory over one landmark set, flattened as
/// `(x₀, y₀, z₀, x₁, …)` with landmarks in ascending index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacements {
    pub landmarks: LandmarkSet,
    pub frames: FrameMatrix,
}

fn check_full_width(track: &TimedRows) -> Result<()> {
    if track.rows.width() != 3 * NUM_LANDMARKS {
        return Err(Error::shape(
            "reprojected track",
            format!("row width {}, expected {}", track.rows.width(), 3 * NUM_LANDMARKS),
        ));
    }
    Ok(())
}

/// Mean of the first (80 fps, reprojected) frame of every clip of one speaker.
pub fn speaker_reference(speaker_id: &str, clips: &[&TimedRows]) -> Result<ReferenceFrame> {
    if clips.is_empty() {
        return Err(Error::InsufficientData(format!(
            "speaker {speaker_id} has no clips to build a reference from"
        )));
    }
    let mut sum = vec![0.0; 3 * NUM_LANDMARKS];
    for track in clips {
        check_full_width(track)?;
        if track.rows.is_empty() {
            return Err(Error::InsufficientData(format!("speaker {speaker_id}: empty clip")));
        }
        for (s, v) in sum.iter_mut().zip(track.rows.row(0)) {
            *s += v;
        }
    }
    let n = clips.len() as f64;
    let points = sum
        .chunks_exact(3)
        .map(|c| [snap_mm(c[0] / n), snap_mm(c[1] / n), snap_mm(c[2] / n)])
        .collect();
    Ok(ReferenceFrame {
        speaker_id: speaker_id.to_string(),
        points,
    })
}

/// Subtracts the speaker reference from every frame, keeping `set` landmarks.
pub fn normalize_clip(
    speaker_id: &str,
    track: &TimedRows,
    reference: &ReferenceFrame,
    set: LandmarkSet,
) -> Result<Displacements> {
    if reference.speaker_id != speaker_id {
        return Err(Error::Consistency(format!(
            "reference belongs to speaker {:?}, clip to {:?}",
            reference.speaker_id, speaker_id
        )));
    }
    check_full_width(track)?;
    let mut data = Vec::with_capacity(track.rows.rows() * set.width());
    for row in track.rows.iter_rows() {
        for k in set.indices() {
            for axis in 0..3 {
                data.push(row[3 * k + axis] - reference.points[k][axis]);
            }
        }
    }
    Ok(Displacements {
        landmarks: set,
        frames: FrameMatrix::new(set.width(), data)?,
    })
}

/// Adds the reference back: absolute positions of the `set` landmarks.
pub fn denormalize(frames: &FrameMatrix, reference: &ReferenceFrame, set: LandmarkSet) -> Result<FrameMatrix> {
    if frames.width() != set.width() {
        return Err(Error::shape(
            "denormalize",
            format!("row width {} does not match {set} ({})", frames.width(), set.width()),
        ));
    }
    let mut data = Vec::with_capacity(frames.as_slice().len());
    for row in frames.iter_rows() {
        for (j, k) in set.indices().enumerate() {
            for axis in 0..3 {
                data.push(row[3 * j + axis] + reference.points[k][axis]);
            }
        }
    }
    FrameMatrix::new(set.width(), data)
}
