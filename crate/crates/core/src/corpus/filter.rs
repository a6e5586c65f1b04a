use super::ClipRecord;
use crate::{Error, Result};

/// Confidence below which an OpenFace frame is considered misaligned.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameIssue {
    pub frame: usize,
    pub confidence: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub clip_id: String,
    pub threshold: f64,
    pub frames: Vec<FrameIssue>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterOutcome {
    Accepted(ClipRecord),
    Rejected(Rejection),
}

impl FilterOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, FilterOutcome::Accepted(_))
    }
}

/// Accepts a clip only if every frame succeeded with confidence ≥ `threshold`.
///
/// A single bad frame rejects the whole clip; dropping frames would leave
/// holes in the time base.
pub fn filter_clip(clip: ClipRecord, threshold: f64) -> Result<FilterOutcome> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Contract(format!(
            "confidence threshold {threshold} outside [0, 1]"
        )));
    }
    let frames: Vec<FrameIssue> = clip
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.success || f.confidence < threshold)
        .map(|(i, f)| FrameIssue {
            frame: i,
            confidence: f.confidence,
            success: f.success,
        })
        .collect();
    if frames.is_empty() {
        Ok(FilterOutcome::Accepted(clip))
    } else {
        Ok(FilterOutcome::Rejected(Rejection {
            clip_id: clip.clip_id,
            threshold,
            frames,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PoseParams, RawFrame};
    use proptest::prelude::*;

    fn clip(confidences: &[f64], success: bool) -> ClipRecord {
        ClipRecord {
            clip_id: "c".into(),
            speaker_id: "s".into(),
            transcript: "A".into(),
            source_fps: 25.0,
            frames: confidences
                .iter()
                .enumerate()
                .map(|(i, &c)| RawFrame {
                    timestamp: i as f64 * 0.04,
                    confidence: c,
                    success,
                    pose: PoseParams::default(),
                    points: vec![[0.0; 3]; 68],
                })
                .collect(),
        }
    }

    #[test]
    fn confident_clip_is_accepted() {
        let out = filter_clip(clip(&[0.9; 5], true), 0.7).unwrap();
        assert!(out.is_accepted());
    }

    #[test]
    fn low_confidence_frame_rejects_clip() {
        let out = filter_clip(clip(&[0.9, 0.9, 0.65, 0.9], true), 0.7).unwrap();
        match out {
            FilterOutcome::Rejected(r) => {
                assert_eq!(r.frames.len(), 1);
                assert_eq!(r.frames[0].frame, 2);
                assert_eq!(r.frames[0].confidence, 0.65);
            }
            _ => panic!("expected rejection"),
        }
    }

    #[test]
    fn zero_threshold_accepts_any_confidence() {
        assert!(filter_clip(clip(&[0.0, 0.1], true), 0.0).unwrap().is_accepted());
        assert!(!filter_clip(clip(&[0.9, 0.9], false), 0.0).unwrap().is_accepted());
    }

    #[test]
    fn threshold_out_of_range_is_contract_error() {
        assert!(filter_clip(clip(&[0.9, 0.9], true), 1.5).is_err());
    }

    proptest! {
        #[test]
        fn raising_threshold_never_accepts_a_rejected_clip(
            confs in proptest::collection::vec(0.0f64..=1.0, 2..12),
            lo in 0.0f64..=1.0,
            bump in 0.0f64..=1.0,
        ) {
            let hi = (lo + bump).min(1.0);
            let low = filter_clip(clip(&confs, true), lo).unwrap().is_accepted();
            let high = filter_clip(clip(&confs, true), hi).unwrap().is_accepted();
            prop_assert!(low || !high);
        }
    }
}
