//! Deterministic synthetic corpus in the OpenFace + LRS3 layout.
//!
//! Each character drives a lip articulation target held over
//! [`STEPS_PER_CHAR`] decoder steps of 12.5 ms:
//!
//! | characters            | aperture (mm) | width change (mm) |
//! |-----------------------|---------------|-------------------|
//! | `A`                   | 9             | 0                 |
//! | `E`                   | 5             | +4                |
//! | `I`                   | 4             | +5                |
//! | `O`                   | 7             | −6                |
//! | `U`                   | 3             | −8                |
//! | `Y`                   | 4             | +3                |
//! | `H`                   | 3             | 0                 |
//! | `W`                   | 2             | −8                |
//! | `R`                   | 2             | −3                |
//! | `F` `V`               | 1             | 0                 |
//! | `M` `B` `P`           | 0             | −1                |
//! | other letters         | 2             | 0                 |
//! | space `'` `,`         | 1             | 0                 |
//! | `.`                   | 0             | 0                 |
//!
//! Within a character the target is scaled by the step profile
//! `[0.7, 1.0, 1.0, 0.85]`, and the trajectory is linear between steps.
//! The resulting head-frame face is posed into camera space with a
//! per-clip random head pose (plus small per-frame drift) and sampled at
//! 30 fps, so reading it back exercises reprojection and resampling.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{apply_pose, Charset, ClipRecord, Point, PoseParams, RawFrame, NUM_LANDMARKS};
use crate::{Error, Result, FRAME_SECONDS};

pub const STEPS_PER_CHAR: usize = 4;
const STEP_PROFILE: [f64; STEPS_PER_CHAR] = [0.7, 1.0, 1.0, 0.85];

/// Frame rate of the generated OpenFace CSVs.
pub const SYNTH_SOURCE_FPS: f64 = 30.0;

const WORDS: &[&str] = &[
    "HELLO", "WORLD", "IT'S", "NOT", "JUST", "MY", "WORK", "FORTY", "TWO", "MOVE", "OPEN", "MAMA", "PAPA", "BOB",
    "SEE", "YOU", "ARE", "WE", "GO", "HOME", "TIME", "IDEA", "MAKE", "BOOK", "PEOPLE", "THINK", "ABOUT", "WAY", "LOOK",
    "VOICE", "FACE", "SPEAK", "TALK", "LIP", "MOUTH", "SMILE", "OH", "AHA", "WHY", "MEMO",
];

/// Articulation target `(aperture, width change)` in millimetres.
pub fn char_target(ch: char) -> (f64, f64) {
    match ch {
        'A' => (9.0, 0.0),
        'E' => (5.0, 4.0),
        'I' => (4.0, 5.0),
        'O' => (7.0, -6.0),
        'U' => (3.0, -8.0),
        'Y' => (4.0, 3.0),
        'H' => (3.0, 0.0),
        'W' => (2.0, -8.0),
        'R' => (2.0, -3.0),
        'F' | 'V' => (1.0, 0.0),
        'M' | 'B' | 'P' => (0.0, -1.0),
        '.' => (0.0, 0.0),
        c if c.is_ascii_uppercase() => (2.0, 0.0),
        _ => (1.0, 0.0),
    }
}

/// Per-step `(aperture, width change)` for `text`, one entry per 12.5 ms.
pub fn articulation(text: &str) -> Vec<(f64, f64)> {
    text.chars()
        .flat_map(|ch| {
            let (a, w) = char_target(ch);
            STEP_PROFILE.iter().map(move |p| (a * p, w * p))
        })
        .collect()
}

/// Neutral (mouth closed) 68-point face in head coordinates, millimetres.
/// X to the subject's left-to-right, Y down, Z away from the camera.
pub fn neutral_face() -> Vec<Point> {
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    // Jaw 0..16: ear to ear through the chin.
    for k in 0..17 {
        let phi = std::f64::consts::PI * k as f64 / 16.0;
        pts.push([-68.0 * phi.cos(), -8.0 + 72.0 * phi.sin(), 45.0 * (1.0 - phi.sin())]);
    }
    // Brows 17..26.
    for k in 0..10 {
        let j = (k % 5) as f64;
        let x = if k < 5 { -55.0 + 11.0 * j } else { 11.0 + 11.0 * j };
        let arch = 4.0 * (1.0 - ((x.abs() - 33.0) / 22.0).powi(2));
        pts.push([x, -45.0 - arch, -12.0]);
    }
    // Nose bridge 27..30 and nostrils 31..35.
    for k in 0..4 {
        pts.push([0.0, -33.0 + 9.0 * k as f64, -22.0 - 4.0 * k as f64]);
    }
    for k in 0..5 {
        let x = -12.0 + 6.0 * k as f64;
        pts.push([x, 6.0 + 0.06 * x * x, -24.0 + 0.04 * x * x]);
    }
    // Eyes 36..41 and 42..47.
    for cx in [-32.0, 32.0] {
        for k in 0..6 {
            let theta = std::f64::consts::PI * k as f64 / 3.0;
            pts.push([cx - 14.0 * theta.cos(), -26.0 - 4.0 * theta.sin(), -10.0]);
        }
    }
    // Outer lip 48..59: left corner, upper lip to right corner, lower lip back.
    for k in 0..12 {
        let theta = std::f64::consts::PI * k as f64 / 6.0;
        pts.push([
            -25.0 * theta.cos(),
            35.0 - 9.0 * theta.sin(),
            -14.0 + 4.0 * theta.sin().abs(),
        ]);
    }
    // Inner lip 60..67, touching at rest.
    let inner_x = [-18.0, -8.0, 0.0, 8.0, 18.0, 8.0, 0.0, -8.0];
    for x in inner_x {
        pts.push([x, 35.0, -15.0]);
    }
    pts
}

/// Applies an articulation target to a head-frame face.
pub fn articulate(face: &[Point], aperture: f64, width: f64) -> Vec<Point> {
    let mut out = face.to_vec();
    let vertical = |k: usize| -> f64 {
        match k {
            49..=53 | 61..=63 => -0.3,
            55..=59 | 65..=67 => 0.7,
            48 | 54 | 60 | 64 => 0.2,
            _ => 0.0,
        }
    };
    for (k, p) in out.iter_mut().enumerate() {
        if k >= 48 {
            p[1] += vertical(k) * aperture;
            p[0] += p[0] / 25.0 * width * 0.5;
            p[2] += 0.3 * width.min(0.0);
        } else if (5..=11).contains(&k) {
            let weight = 1.0 - (k as f64 - 8.0).abs() / 4.0;
            p[1] += 0.5 * aperture * weight;
        }
    }
    out
}

/// Per-speaker face shape.
#[derive(Debug, Clone)]
pub struct SpeakerShape {
    pub scale: f64,
    pub offsets: Vec<Point>,
}

impl SpeakerShape {
    pub fn neutral() -> Self {
        Self {
            scale: 1.0,
            offsets: vec![[0.0; 3]; NUM_LANDMARKS],
        }
    }

    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            scale: rng.gen_range(0.9..1.1),
            offsets: (0..NUM_LANDMARKS)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect(),
        }
    }

    fn face(&self) -> Vec<Point> {
        neutral_face()
            .iter()
            .zip(&self.offsets)
            .map(|(p, o)| {
                [
                    p[0] * self.scale + o[0],
                    p[1] * self.scale + o[1],
                    p[2] * self.scale + o[2],
                ]
            })
            .collect()
    }
}

/// Renders one clip: articulation sampled at `fps`, posed into camera space.
///
/// `drift` adds a slow per-frame wobble on top of `pose` (0 disables it).
pub fn synth_clip(
    clip_id: &str,
    speaker_id: &str,
    text: &str,
    speaker: &SpeakerShape,
    pose: PoseParams,
    drift: f64,
    fps: f64,
) -> ClipRecord {
    let steps = articulation(text);
    let face = speaker.face();
    let duration = (steps.len().saturating_sub(1)) as f64 * FRAME_SECONDS;
    let count = (duration * fps + 1e-9).floor() as usize + 1;
    let frames = (0..count)
        .map(|n| {
            let t = n as f64 / fps;
            let s = t / FRAME_SECONDS;
            let i = (s.floor() as usize).min(steps.len() - 1);
            let j = (i + 1).min(steps.len() - 1);
            let w = (s - i as f64).clamp(0.0, 1.0);
            let a = steps[i].0 + (steps[j].0 - steps[i].0) * w;
            let wd = steps[i].1 + (steps[j].1 - steps[i].1) * w;
            let phase = 2.0 * std::f64::consts::PI * 0.7 * t;
            let frame_pose = PoseParams {
                tx: pose.tx + drift * phase.sin(),
                ty: pose.ty + drift * phase.cos(),
                tz: pose.tz + drift * (0.5 * phase).sin(),
                rx: pose.rx + 0.01 * drift * phase.cos(),
                ry: pose.ry + 0.01 * drift * phase.sin(),
                rz: pose.rz - 0.01 * drift * phase.sin(),
            };
            RawFrame {
                timestamp: t,
                confidence: 1.0,
                success: true,
                pose: frame_pose,
                points: apply_pose(&frame_pose, &articulate(&face, a, wd)),
            }
        })
        .collect();
    ClipRecord {
        clip_id: clip_id.to_string(),
        speaker_id: speaker_id.to_string(),
        transcript: text.to_string(),
        source_fps: fps,
        frames,
    }
}

/// What [`synth_corpus`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    /// `(clip id, speaker id, transcript)` per clip.
    pub clips: Vec<(String, String, String)>,
}

/// Writes `n_clips` OpenFace CSV / transcript pairs plus a speakers manifest
/// into `out_dir`. Output bytes are a pure function of `(seed, n_clips, charset)`.
pub fn synth_corpus(seed: u64, n_clips: usize, charset: &Charset, out_dir: &Path) -> Result<SynthSummary> {
    if n_clips < 2 {
        return Err(Error::Contract(format!(
            "synthetic corpus needs at least 2 clips, got {n_clips}"
        )));
    }
    let words: Vec<&str> = WORDS
        .iter()
        .copied()
        .filter(|w| w.chars().all(|c| charset.id(c).is_some()))
        .collect();
    if words.is_empty() || charset.id(' ').is_none() {
        return Err(Error::Contract("charset cannot spell any synthetic word".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_speakers = (n_clips / 4).clamp(1, 5);
    let speakers: Vec<SpeakerShape> = (0..n_speakers).map(|_| SpeakerShape::random(&mut rng)).collect();

    let mut manifest = String::new();
    let mut clips = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let clip_id = format!("clip_{i:04}");
        let speaker_id = format!("spk_{}", i % n_speakers);
        let n_words = rng.gen_range(2..=3);
        let text = (0..n_words)
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect::<Vec<_>>()
            .join(" ");
        let pose = PoseParams {
            tx: rng.gen_range(-60.0..60.0),
            ty: rng.gen_range(-40.0..40.0),
            tz: rng.gen_range(450.0..750.0),
            rx: rng.gen_range(-0.25..0.25),
            ry: rng.gen_range(-0.25..0.25),
            rz: rng.gen_range(-0.25..0.25),
        };
        let record = synth_clip(
            &clip_id,
            &speaker_id,
            &text,
            &speakers[i % n_speakers],
            pose,
            1.0,
            SYNTH_SOURCE_FPS,
        );
        let csv_path = out_dir.join(format!("{clip_id}.csv"));
        let mut csv_bytes = Vec::new();
        super::write_openface_csv(&record.frames, &mut csv_bytes)?;
        fs::write(&csv_path, csv_bytes).map_err(|e| Error::io(&csv_path, e))?;
        let txt_path = out_dir.join(format!("{clip_id}.txt"));
        fs::write(&txt_path, format!("Text:  {text}\nConf:  4\n")).map_err(|e| Error::io(&txt_path, e))?;
        manifest.push_str(&format!("{clip_id}\t{speaker_id}\n"));
        clips.push((clip_id, speaker_id, text));
    }
    let manifest_path = out_dir.join(super::SPEAKERS_MANIFEST);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(SynthSummary { clips })
}
