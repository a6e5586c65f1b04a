use super::{Point, PoseParams, RawFrame};
use crate::{Error, Result};

type Mat3 = [[f64; 3]; 3];

// 2^32: reprojected coordinates live on a 2^-32 mm lattice.
const LATTICE: f64 = 4_294_967_296.0;

/// Rounds a coordinate to the 2^-32 mm lattice.
///
/// For |v| < 2^20 mm, differences and sums of lattice values are exact in
/// f64, which makes reference subtraction exactly invertible.
pub fn snap_mm(v: f64) -> f64 {
    (v * LATTICE).round() / LATTICE
}

/// Head rotation `R = Rz(rz) · Ry(ry) · Rx(rx)` (right-handed, radians).
pub fn rotation_matrix(pose: &PoseParams) -> Mat3 {
    let (sx, cx) = pose.rx.sin_cos();
    let (sy, cy) = pose.ry.sin_cos();
    let (sz, cz) = pose.rz.sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// Places head-frame points into camera space: `R·p + T`.
pub fn apply_pose(pose: &PoseParams, points: &[Point]) -> Vec<Point> {
    let r = rotation_matrix(pose);
    let t = pose.translation();
    points
        .iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for (i, o) in out.iter_mut().enumerate() {
                *o = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
            }
            out
        })
        .collect()
}

/// Removes head pose from camera-space points: `Rᵀ·(p − T)`, snapped to the lattice.
pub fn reproject_points(pose: &PoseParams, points: &[Point]) -> Result<Vec<Point>> {
    if !pose.is_finite() {
        return Err(Error::NumericDomain(format!("non-finite pose {pose:?}")));
    }
    let r = rotation_matrix(pose);
    let t = pose.translation();
    points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericDomain(format!("landmark {k} is not finite: {p:?}")));
            }
            let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
            let mut out = [0.0; 3];
            for (j, o) in out.iter_mut().enumerate() {
                *o = snap_mm(r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2]);
            }
            Ok(out)
        })
        .collect()
}

/// Pose-invariant landmark positions for one OpenFace frame.
pub fn reproject_frame(frame: &RawFrame) -> Result<Vec<Point>> {
    reproject_points(&frame.pose, &frame.points)
}
