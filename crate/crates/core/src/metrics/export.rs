use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::corpus::{LIP_START, NUM_LANDMARKS};
use crate::{Error, FrameMatrix, Result};

pub const CSV_HEADER: &str = "frame,landmark,x_mm,y_mm,z_mm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    /// One row per frame and landmark.
    Csv,
    /// One SVG file per frame, X-Y projection, lips in red.
    SvgFrames,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "svg-frames" => Ok(ExportFormat::SvgFrames),
            other => Err(Error::Usage(format!(
                "unknown export format {other:?} (expected csv or svg-frames)"
            ))),
        }
    }
}

impl std::fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExportFormat::Csv => "csv",
            ExportFormat::SvgFrames => "svg-frames",
        })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("trajectory csv: {e}"))
}

/// Shortest round-trip formatting, so [`read_csv`] recovers every bit.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(',')).map_err(csv_error)?;
    for t in 0..traj.num_frames() {
        for (j, &k) in traj.landmarks().iter().enumerate() {
            let [x, y, z] = traj.point(t, j);
            w.write_record([
                t.to_string(),
                k.to_string(),
                x.to_string(),
                y.to_string(),
                z.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::Format(format!("trajectory csv: {e}")))
}

fn field<T: FromStr>(rec: &csv::StringRecord, row: usize, col: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let name = CSV_HEADER.split(',').nth(col).unwrap_or("?");
    let raw = rec.get(col).ok_or_else(|| Error::Parse {
        row,
        column: name.into(),
        message: "missing field".into(),
    })?;
    raw.trim().parse().map_err(|e: T::Err| Error::Parse {
        row,
        column: name.into(),
        message: format!("{raw:?}: {e}"),
    })
}

/// Inverse of [`write_csv`]. Frames must be numbered 0, 1, ... and list the
/// same landmarks in the same order.
pub fn read_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Format(format!(
            "trajectory csv header {:?}, expected {CSV_HEADER:?}",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let row = i + 1;
        let f: usize = field(&rec, row, 0)?;
        let k: usize = field(&rec, row, 1)?;
        let p: [f64; 3] = [field(&rec, row, 2)?, field(&rec, row, 3)?, field(&rec, row, 4)?];
        rows.push((f, k, p));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("trajectory csv has no rows".into()));
    }
    let landmarks: Vec<usize> = rows.iter().take_while(|r| r.0 == 0).map(|r| r.1).collect();
    let l = landmarks.len();
    if l == 0 {
        return Err(Error::Consistency("trajectory csv does not start at frame 0".into()));
    }
    let mut data = Vec::with_capacity(3 * rows.len());
    for (i, &(f, k, p)) in rows.iter().enumerate() {
        if f != i / l || k != landmarks[i % l] {
            return Err(Error::Consistency(format!(
                "row {}: expected frame {} landmark {}, found frame {f} landmark {k}",
                i + 1,
                i / l,
                landmarks[i % l]
            )));
        }
        data.extend_from_slice(&p);
    }
    if rows.len() % l != 0 {
        return Err(Error::Consistency(format!(
            "last frame lists {} of {l} landmarks",
            rows.len() % l
        )));
    }
    Trajectory::new(landmarks, FrameMatrix::new(3 * l, data)?)
}

pub fn import_csv(path: &Path) -> Result<Trajectory> {
    read_csv(fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

const SVG_SIZE: f64 = 400.0;
const SVG_MARGIN: f64 = 20.0;

fn bounds(traj: &Trajectory) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for t in 0..traj.num_frames() {
        for j in 0..traj.num_landmarks() {
            let [x, y, _] = traj.point(t, j);
            b = [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)];
        }
    }
    b
}

fn render_frame(traj: &Trajectory, t: usize, b: [f64; 4]) -> String {
    let span = (b[2] - b[0]).max(b[3] - b[1]).max(1e-9);
    let scale = (SVG_SIZE - 2.0 * SVG_MARGIN) / span;
    let map = |p: [f64; 3]| (SVG_MARGIN + (p[0] - b[0]) * scale, SVG_MARGIN + (p[1] - b[1]) * scale);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    )
    .expect("writing to a String");
    writeln!(s, r#"<title>frame {t}</title>"#).expect("writing to a String");
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("writing to a String");
    // Outer (48..59) and inner (60..67) lip contours, when present.
    for ring in [LIP_START..60, 60..NUM_LANDMARKS] {
        let pts: Option<Vec<(f64, f64)>> = ring
            .map(|k| {
                traj.landmarks()
                    .iter()
                    .position(|&l| l == k)
                    .map(|j| map(traj.point(t, j)))
            })
            .collect();
        if let Some(pts) = pts {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
            writeln!(
                s,
                r#"<polygon points="{}" fill="none" stroke="red" stroke-width="1.5"/>"#,
                path.join(" ")
            )
            .expect("writing to a String");
        }
    }
    for (j, &k) in traj.landmarks().iter().enumerate() {
        let (x, y) = map(traj.point(t, j));
        let color = if k >= LIP_START { "red" } else { "black" };
        writeln!(
            s,
            r#"<circle cx="{x:.3}" cy="{y:.3}" r="2.5" fill="{color}" stroke="{color}"><title>{k}</title></circle>"#
        )
        .expect("writing to a String");
    }
    s.push_str("</svg>\n");
    s
}

/// Frame `t` as a standalone SVG, scaled to the trajectory's X-Y extent.
pub fn write_svg(traj: &Trajectory, t: usize) -> Result<String> {
    if t >= traj.num_frames() {
        return Err(Error::Contract(format!(
            "frame {t} out of range ({} frames)",
            traj.num_frames()
        )));
    }
    Ok(render_frame(traj, t, bounds(traj)))
}

/// Writes `traj` to `out`: a single file for CSV, a directory of
/// `frame_NNNNN.svg` files for SVG. Returns every file written.
pub fn export_trajectory(traj: &Trajectory, format: ExportFormat, out: &Path) -> Result<Vec<PathBuf>> {
    match format {
        ExportFormat::Csv => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut bytes = Vec::new();
            write_csv(traj, &mut bytes)?;
            fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
            Ok(vec![out.to_path_buf()])
        }
        ExportFormat::SvgFrames => {
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let b = bounds(traj);
            (0..traj.num_frames())
                .map(|t| {
                    let path = out.join(format!("frame_{t:05}.svg"));
                    fs::write(&path, render_frame(traj, t, b)).map_err(|e| Error::io(&path, e))?;
                    Ok(path)
                })
                .collect()
        }
    }
}
