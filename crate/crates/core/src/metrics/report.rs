use serde::Serialize;

use super::Trajectory;
use crate::{Error, Result};

/// Error statistics of a predicted trajectory against ground truth, in mm.
///
/// Frames beyond the shorter of the two trajectories are ignored and `note`
/// says so.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub landmarks: Vec<usize>,
    pub frames_compared: usize,
    pub pred_frames: usize,
    pub truth_frames: usize,
    /// Mean over frames of the sum of absolute coordinate differences.
    pub mean_manhattan_mm: f64,
    /// `mean_manhattan_mm` divided by the landmark count: mean L1 distance per landmark.
    pub mean_landmark_l1_mm: f64,
    /// Mean absolute difference over every coordinate.
    pub mean_abs_mm: f64,
    /// Mean absolute difference per landmark, averaged over frames and axes.
    pub per_landmark_mm: Vec<f64>,
    /// Mean absolute difference per axis (x, y, z).
    pub per_axis_mm: [f64; 3],
    pub note: Option<String>,
}

/// Manhattan distance statistics between `pred` and `truth`.
pub fn manhattan_error(pred: &Trajectory, truth: &Trajectory) -> Result<ErrorReport> {
    if pred.landmarks() != truth.landmarks() {
        return Err(Error::shape(
            "manhattan error",
            format!(
                "landmark sets differ ({} vs {} landmarks)",
                pred.num_landmarks(),
                truth.num_landmarks()
            ),
        ));
    }
    let n = pred.num_frames().min(truth.num_frames());
    if n == 0 {
        return Err(Error::Contract(format!(
            "no overlapping frames (prediction {}, truth {})",
            pred.num_frames(),
            truth.num_frames()
        )));
    }
    let l = pred.num_landmarks();
    let mut frame_sum = 0.0;
    let mut per_landmark = vec![0.0; l];
    let mut per_axis = [0.0; 3];
    for t in 0..n {
        let (p, q) = (pred.frames().row(t), truth.frames().row(t));
        let mut manhattan = 0.0;
        for j in 0..l {
            for a in 0..3 {
                let d = (p[3 * j + a] - q[3 * j + a]).abs();
                manhattan += d;
                per_landmark[j] += d;
                per_axis[a] += d;
            }
        }
        frame_sum += manhattan;
    }
    let mean_manhattan_mm = frame_sum / n as f64;
    let note = (pred.num_frames() != truth.num_frames()).then(|| {
        format!(
            "lengths differ (prediction {}, truth {}); compared the first {n} frames",
            pred.num_frames(),
            truth.num_frames()
        )
    });
    Ok(ErrorReport {
        landmarks: pred.landmarks().to_vec(),
        frames_compared: n,
        pred_frames: pred.num_frames(),
        truth_frames: truth.num_frames(),
        mean_manhattan_mm,
        mean_landmark_l1_mm: mean_manhattan_mm / l as f64,
        mean_abs_mm: frame_sum / (n * 3 * l) as f64,
        per_landmark_mm: per_landmark.into_iter().map(|s| s / (3 * n) as f64).collect(),
        per_axis_mm: per_axis.map(|s| s / (n * l) as f64),
        note,
    })
}

/// One labelled [`ErrorReport`] per model output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub landmarks: Vec<usize>,
    pub rows: Vec<(String, ErrorReport)>,
}

pub const COMPARISON_HEADER: &str =
    "label,frames,mean_manhattan_mm,mean_landmark_l1_mm,mean_abs_mm,x_mm,y_mm,z_mm,note";

impl ComparisonReport {
    /// The merged table, one CSV row per label.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COMPARISON_HEADER.split(',')).expect("writing to memory");
        for (label, r) in &self.rows {
            let nums = [
                r.mean_manhattan_mm,
                r.mean_landmark_l1_mm,
                r.mean_abs_mm,
                r.per_axis_mm[0],
                r.per_axis_mm[1],
                r.per_axis_mm[2],
            ];
            let mut record = vec![label.clone(), r.frames_compared.to_string()];
            record.extend(nums.iter().map(f64::to_string));
            record.push(r.note.clone().unwrap_or_default());
            w.write_record(&record).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
    }
}

/// Scores every labelled output against `truth` on the landmarks all of
/// them share, so a 68-point model and a lips-only model are compared on
/// the lips.
pub fn compare_report(outputs: &[(&str, &Trajectory)], truth: &Trajectory) -> Result<ComparisonReport> {
    if outputs.is_empty() {
        return Err(Error::Contract("compare_report needs at least one model output".into()));
    }
    let common: Vec<usize> = truth
        .landmarks()
        .iter()
        .copied()
        .filter(|k| outputs.iter().all(|(_, o)| o.landmarks().contains(k)))
        .collect();
    if common.is_empty() {
        return Err(Error::Contract("outputs and truth share no landmarks".into()));
    }
    let truth = truth.select(&common)?;
    let rows = outputs
        .iter()
        .map(|(label, o)| Ok((label.to_string(), manhattan_error(&o.select(&common)?, &truth)?)))
        .collect::<Result<_>>()?;
    Ok(ComparisonReport {
        landmarks: common,
        rows,
    })
}
