use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    encode_text, filter_clip, normalize_clip, parse_openface_csv, parse_transcript, reproject_frame, resample_80fps,
    speaker_reference, Charset, ClipRecord, Displacements, FilterOutcome, LandmarkSet, NormalizedClip, ReferenceFrame,
    TimedRows, DEFAULT_CONFIDENCE_THRESHOLD, NUM_LANDMARKS,
};
use crate::bytes::{ByteReader, ByteWriter};
use crate::{Error, FrameMatrix, Result};

/// Name of the `clip_id<TAB>speaker_id` manifest inside a corpus directory.
pub const SPEAKERS_MANIFEST: &str = "speakers.tsv";

const MAGIC: &[u8] = b"LTDS1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub threshold: f64,
    pub landmarks: LandmarkSet,
    pub seed: u64,
    /// Fraction of clips held out for validation.
    pub val_fraction: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            landmarks: LandmarkSet::Lips,
            seed: 0,
            val_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipIssue {
    pub clip_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PrepareReport {
    pub accepted: Vec<String>,
    pub rejected: Vec<ClipIssue>,
}

/// Normalized clips with a train/validation partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub charset: Charset,
    pub split_seed: u64,
    pub landmarks: LandmarkSet,
    pub clips: Vec<NormalizedClip>,
    pub splits: Vec<Split>,
}

struct Prepared {
    clip_id: String,
    speaker_id: String,
    tokens: Vec<usize>,
    track: TimedRows,
}

fn read_manifest(root: &Path) -> Result<BTreeMap<String, String>> {
    let path = root.join(SPEAKERS_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (clip, speaker) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("{SPEAKERS_MANIFEST} line {}: expected clip<TAB>speaker", i + 1)))?;
        if out
            .insert(clip.trim().to_string(), speaker.trim().to_string())
            .is_some()
        {
            return Err(Error::Format(format!("{SPEAKERS_MANIFEST}: duplicate clip {clip:?}")));
        }
    }
    Ok(out)
}

fn prepare_clip(
    root: &Path,
    clip_id: &str,
    speaker_id: &str,
    config: &PrepareConfig,
    charset: &Charset,
) -> Result<Prepared> {
    let csv_path = root.join(format!("{clip_id}.csv"));
    let txt_path = root.join(format!("{clip_id}.txt"));
    let frames = parse_openface_csv(fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?)?;
    let transcript = parse_transcript(fs::File::open(&txt_path).map_err(|e| Error::io(&txt_path, e))?)?;
    let record = ClipRecord {
        clip_id: clip_id.to_string(),
        speaker_id: speaker_id.to_string(),
        transcript,
        source_fps: ClipRecord::estimate_fps(&frames),
        frames,
    };
    record.validate()?;
    let record = match filter_clip(record, config.threshold)? {
        FilterOutcome::Accepted(r) => r,
        FilterOutcome::Rejected(rej) => {
            let frames: Vec<String> = rej
                .frames
                .iter()
                .map(|f| format!("{} (confidence {}, success {})", f.frame, f.confidence, f.success))
                .collect();
            return Err(Error::Consistency(format!(
                "rejected by confidence threshold {}: frames {}",
                rej.threshold,
                frames.join(", ")
            )));
        }
    };
    let tokens = encode_text(&record.transcript, charset)?;
    let mut data = Vec::with_capacity(record.frames.len() * 3 * NUM_LANDMARKS);
    for frame in &record.frames {
        data.extend(reproject_frame(frame)?.into_iter().flatten());
    }
    let times = record.frames.iter().map(|f| f.timestamp).collect();
    let track = resample_80fps(&TimedRows::new(times, FrameMatrix::new(3 * NUM_LANDMARKS, data)?)?)?;
    Ok(Prepared {
        clip_id: record.clip_id,
        speaker_id: record.speaker_id,
        tokens,
        track,
    })
}

/// Runs the whole label pipeline over a corpus directory.
///
/// The directory holds `<id>.csv` (OpenFace) and `<id>.txt` (transcript)
/// per clip plus [`SPEAKERS_MANIFEST`]. Clips that fail any stage are
/// listed in the report; only an empty result is an error.
pub fn build_dataset(root: &Path, config: &PrepareConfig) -> Result<(Dataset, PrepareReport)> {
    if !(0.0..1.0).contains(&config.val_fraction) {
        return Err(Error::Contract(format!(
            "val_fraction {} outside [0, 1)",
            config.val_fraction
        )));
    }
    let charset = Charset::default();
    let manifest = read_manifest(root)?;
    let mut report = PrepareReport::default();

    let listed: BTreeSet<&str> = manifest.keys().map(String::as_str).collect();
    if let Ok(entries) = fs::read_dir(root) {
        let mut stray: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter_map(|n| n.strip_suffix(".csv").map(str::to_string))
            .filter(|id| !listed.contains(id.as_str()))
            .collect();
        stray.sort();
        report.rejected.extend(stray.into_iter().map(|clip_id| ClipIssue {
            clip_id,
            reason: format!("not listed in {SPEAKERS_MANIFEST}"),
        }));
    }

    let mut prepared = Vec::new();
    for (clip_id, speaker_id) in &manifest {
        match prepare_clip(root, clip_id, speaker_id, config, &charset) {
            Ok(p) if p.tokens.is_empty() => report.rejected.push(ClipIssue {
                clip_id: clip_id.clone(),
                reason: "empty transcript".into(),
            }),
            Ok(p) => prepared.push(p),
            Err(e) => report.rejected.push(ClipIssue {
                clip_id: clip_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if prepared.is_empty() {
        return Err(Error::InsufficientData(format!(
            "zero clips survive ({} rejected)",
            report.rejected.len()
        )));
    }
    if prepared.len() < 2 {
        return Err(Error::InsufficientData(
            "only one clip survives; need at least one per split".into(),
        ));
    }

    let mut by_speaker: BTreeMap<&str, Vec<&TimedRows>> = BTreeMap::new();
    for p in &prepared {
        by_speaker.entry(p.speaker_id.as_str()).or_default().push(&p.track);
    }
    let references: BTreeMap<String, ReferenceFrame> = by_speaker
        .iter()
        .map(|(spk, tracks)| Ok((spk.to_string(), speaker_reference(spk, tracks)?)))
        .collect::<Result<_>>()?;

    let mut clips = Vec::with_capacity(prepared.len());
    for p in prepared {
        let reference = references[&p.speaker_id].clone();
        let d = normalize_clip(&p.speaker_id, &p.track, &reference, config.landmarks)?;
        // Stored precision is f32; keep the in-memory dataset identical to its file.
        let stored: Vec<f64> = d.frames.as_slice().iter().map(|&v| v as f32 as f64).collect();
        report.accepted.push(p.clip_id.clone());
        clips.push(NormalizedClip {
            clip_id: p.clip_id,
            speaker_id: p.speaker_id,
            tokens: p.tokens,
            displacements: Displacements {
                landmarks: d.landmarks,
                frames: FrameMatrix::new(d.frames.width(), stored)?,
            },
            reference,
        });
    }

    let splits = assign_splits(clips.len(), config.val_fraction, config.seed);
    Ok((
        Dataset {
            charset,
            split_seed: config.seed,
            landmarks: config.landmarks,
            clips,
            splits,
        },
        report,
    ))
}

fn assign_splits(n: usize, val_fraction: f64, seed: u64) -> Vec<Split> {
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; n];
    for &i in &order[..n_val] {
        splits[i] = Split::Validation;
    }
    splits
}

impl Dataset {
    pub fn split(&self, which: Split) -> Vec<&NormalizedClip> {
        self.clips
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn train(&self) -> Vec<&NormalizedClip> {
        self.split(Split::Train)
    }

    pub fn validation(&self) -> Vec<&NormalizedClip> {
        self.split(Split::Validation)
    }

    pub fn reference(&self, speaker_id: &str) -> Option<&ReferenceFrame> {
        self.clips
            .iter()
            .find(|c| c.speaker_id == speaker_id)
            .map(|c| &c.reference)
    }

    pub fn clip(&self, clip_id: &str) -> Option<&NormalizedClip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn width(&self) -> usize {
        self.landmarks.width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips.len() != self.splits.len() {
            return Err(Error::Consistency("split list does not cover every clip".into()));
        }
        if self.train().is_empty() || self.validation().is_empty() {
            return Err(Error::Consistency("each split needs at least one clip".into()));
        }
        for c in &self.clips {
            if let Some(&t) = c.tokens.iter().find(|&&t| t >= self.charset.len()) {
                return Err(Error::Consistency(format!(
                    "clip {}: token id {t} out of range",
                    c.clip_id
                )));
            }
            if c.displacements.landmarks != self.landmarks {
                return Err(Error::Consistency(format!("clip {}: landmark set mismatch", c.clip_id)));
            }
        }
        Ok(())
    }

    /// Serialises to the `LTDS1` container (little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.raw(MAGIC);
        w.u32(VERSION);
        w.str(&self.charset.as_string());
        w.u64(self.split_seed);
        w.u8(match self.landmarks {
            LandmarkSet::Lips => 0,
            LandmarkSet::All => 1,
        });
        w.len_u32(self.clips.len());
        for (clip, split) in self.clips.iter().zip(&self.splits) {
            w.str(&clip.clip_id);
            w.str(&clip.speaker_id);
            w.u8(match split {
                Split::Train => 0,
                Split::Validation => 1,
            });
            w.len_u32(clip.tokens.len());
            for &t in &clip.tokens {
                w.len_u32(t);
            }
            w.str(&clip.reference.speaker_id);
            for p in &clip.reference.points {
                for &v in p {
                    w.f64(v);
                }
            }
            let frames = &clip.displacements.frames;
            w.len_u32(frames.rows());
            w.len_u32(frames.width());
            for &v in frames.as_slice() {
                w.f32(v as f32);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "dataset file");
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let charset = Charset::from_symbols(r.str()?.chars().collect())?;
        let split_seed = r.u64()?;
        let landmarks = match r.u8()? {
            0 => LandmarkSet::Lips,
            1 => LandmarkSet::All,
            other => return Err(Error::Format(format!("unknown landmark set tag {other}"))),
        };
        let n = r.len()?;
        let mut clips = Vec::with_capacity(n);
        let mut splits = Vec::with_capacity(n);
        for _ in 0..n {
            let clip_id = r.str()?;
            let speaker_id = r.str()?;
            splits.push(match r.u8()? {
                0 => Split::Train,
                1 => Split::Validation,
                other => return Err(Error::Format(format!("unknown split tag {other}"))),
            });
            let n_tokens = r.len()?;
            let tokens = (0..n_tokens).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let ref_speaker = r.str()?;
            let mut points = Vec::with_capacity(NUM_LANDMARKS);
            for _ in 0..NUM_LANDMARKS {
                points.push([r.f64()?, r.f64()?, r.f64()?]);
            }
            let rows = r.len()?;
            let width = r.len()?;
            if width != landmarks.width() {
                return Err(Error::Format(format!(
                    "clip {clip_id}: width {width} does not match {landmarks}"
                )));
            }
            let data = (0..rows * width)
                .map(|_| r.f32().map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            clips.push(NormalizedClip {
                clip_id,
                speaker_id,
                tokens,
                displacements: Displacements {
                    landmarks,
                    frames: FrameMatrix::new(width, data)?,
                },
                reference: ReferenceFrame {
                    speaker_id: ref_speaker,
                    points,
                },
            });
        }
        r.finish()?;
        let ds = Dataset {
            charset,
            split_seed,
            landmarks,
            clips,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
