use crate::{Error, FrameMatrix, Result, FRAME_RATE};

/// Timestamped rows (seconds, one row of values per timestamp).
#[derive(Debug, Clone, PartialEq)]
pub struct TimedRows {
    pub times: Vec<f64>,
    pub rows: FrameMatrix,
}

impl TimedRows {
    pub fn new(times: Vec<f64>, rows: FrameMatrix) -> Result<Self> {
        if times.len() != rows.rows() {
            return Err(Error::shape(
                "timed rows",
                format!("{} timestamps for {} rows", times.len(), rows.rows()),
            ));
        }
        Ok(Self { times, rows })
    }
}

/// Linearly interpolates a trajectory onto the 80 fps grid `t₀ + k/80`.
///
/// Grid points that coincide with a source timestamp copy that row exactly.
pub fn resample_80fps(track: &TimedRows) -> Result<TimedRows> {
    let times = &track.times;
    if times.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "resampling needs at least 2 frames, got {}",
            times.len()
        )));
    }
    if let Some(i) = times
        .windows(2)
        .position(|w| !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite())
    {
        return Err(Error::Format(format!(
            "timestamps not strictly increasing at frame {}: {} then {}",
            i + 1,
            times[i],
            times[i + 1]
        )));
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    // Tolerance keeps an end time of exactly k/80 from flooring to k-1.
    let steps = (span * FRAME_RATE + 1e-9).floor() as usize;
    let width = track.rows.width();

    let mut out_times = Vec::with_capacity(steps + 1);
    let mut data = Vec::with_capacity((steps + 1) * width);
    let mut seg = 0;
    for k in 0..=steps {
        let t = t0 + k as f64 / FRAME_RATE;
        while seg + 2 < times.len() && times[seg + 1] <= t {
            seg += 1;
        }
        let (ta, tb) = (times[seg], times[seg + 1]);
        let (a, b) = (track.rows.row(seg), track.rows.row(seg + 1));
        if t == ta {
            data.extend_from_slice(a);
        } else if t >= tb {
            data.extend_from_slice(b);
        } else {
            let w = (t - ta) / (tb - ta);
            data.extend(a.iter().zip(b).map(|(&x, &y)| x + (y - x) * w));
        }
        out_times.push(t);
    }
    TimedRows::new(out_times, FrameMatrix::new(width, data)?)
}
