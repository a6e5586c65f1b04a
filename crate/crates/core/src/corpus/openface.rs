use std::collections::HashMap;
use std::io::{Read, Write};

use super::{PoseParams, RawFrame, NUM_LANDMARKS};
use crate::{Error, Result};

const SCALAR_COLUMNS: [&str; 11] = [
    "frame",
    "face_id",
    "timestamp",
    "confidence",
    "success",
    "pose_Tx",
    "pose_Ty",
    "pose_Tz",
    "pose_Rx",
    "pose_Ry",
    "pose_Rz",
];

struct Layout {
    timestamp: usize,
    confidence: usize,
    success: usize,
    pose: [usize; 6],
    // [axis][landmark]
    coords: [Vec<usize>; 3],
}

impl Layout {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
        let find = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Format(format!("missing required column `{name}`")))
        };
        for name in SCALAR_COLUMNS {
            find(name)?;
        }
        let axis = |prefix: &str| -> Result<Vec<usize>> {
            (0..NUM_LANDMARKS).map(|i| find(&format!("{prefix}_{i}"))).collect()
        };
        Ok(Self {
            timestamp: find("timestamp")?,
            confidence: find("confidence")?,
            success: find("success")?,
            pose: [
                find("pose_Tx")?,
                find("pose_Ty")?,
                find("pose_Tz")?,
                find("pose_Rx")?,
                find("pose_Ry")?,
                find("pose_Rz")?,
            ],
            coords: [axis("X")?, axis("Y")?, axis("Z")?],
        })
    }
}

/// Parses OpenFace 2.0 `FeatureExtraction` output.
///
/// Columns are matched by (whitespace-trimmed) header name, so column order
/// and extra columns (gaze, action units, 2D landmarks...) do not matter.
/// Data rows are numbered from 1 in error messages.
pub fn parse_openface_csv<R: Read>(input: R) -> Result<Vec<RawFrame>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyInput("no header line".into()));
    }
    let layout = Layout::from_header(&header)?;

    let mut frames = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |col: usize| -> Result<f64> {
            let text = record.get(col).unwrap_or("");
            text.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: header[col].to_string(),
                message: format!("not a number: {text:?}"),
            })
        };
        let confidence = cell(layout.confidence)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Parse {
                row,
                column: "confidence".into(),
                message: format!("{confidence} outside [0, 1]"),
            });
        }
        let pose = PoseParams {
            tx: cell(layout.pose[0])?,
            ty: cell(layout.pose[1])?,
            tz: cell(layout.pose[2])?,
            rx: cell(layout.pose[3])?,
            ry: cell(layout.pose[4])?,
            rz: cell(layout.pose[5])?,
        };
        let mut points = Vec::with_capacity(NUM_LANDMARKS);
        for k in 0..NUM_LANDMARKS {
            points.push([
                cell(layout.coords[0][k])?,
                cell(layout.coords[1][k])?,
                cell(layout.coords[2][k])?,
            ]);
        }
        frames.push(RawFrame {
            timestamp: cell(layout.timestamp)?,
            confidence,
            success: cell(layout.success)? != 0.0,
            pose,
            points,
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("header present but no data rows".into()));
    }
    Ok(frames)
}

/// Writes frames in the OpenFace column layout (scalar columns, then all X, Y, Z).
///
/// Floats use Rust's shortest round-trip formatting, so parsing the output
/// recovers every value exactly.
pub fn write_openface_csv<W: Write>(frames: &[RawFrame], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header: Vec<String> = SCALAR_COLUMNS.iter().map(|s| s.to_string()).collect();
    for axis in ["X", "Y", "Z"] {
        header.extend((0..NUM_LANDMARKS).map(|i| format!("{axis}_{i}")));
    }
    let map_err = |e: csv::Error| Error::Format(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(map_err)?;
    for (i, f) in frames.iter().enumerate() {
        if f.points.len() != NUM_LANDMARKS {
            return Err(Error::shape(
                "openface csv",
                format!("frame {i} has {} landmarks", f.points.len()),
            ));
        }
        let mut row: Vec<String> = vec![
            (i + 1).to_string(),
            "0".into(),
            f.timestamp.to_string(),
            f.confidence.to_string(),
            u8::from(f.success).to_string(),
            f.pose.tx.to_string(),
            f.pose.ty.to_string(),
            f.pose.tz.to_string(),
            f.pose.rx.to_string(),
            f.pose.ry.to_string(),
            f.pose.rz.to_string(),
        ];
        for axis in 0..3 {
            row.extend(f.points.iter().map(|p| p[axis].to_string()));
        }
        w.write_record(&row).map_err(map_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv flush failed: {e}")))?;
    Ok(())
}
