use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, Real};
use crate::corpus::NormalizedClip;
use crate::{Error, Result};

/// Zero-padded clips of one optimizer step.
///
/// `mask` is true exactly on real frames; `gate_targets` is 0 before each
/// clip's last real frame and 1 on that frame and on all padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub clip_ids: Vec<String>,
    /// `size × max_text` token ids, padded with 0.
    pub tokens: Vec<usize>,
    pub text_lengths: Vec<usize>,
    /// `size × max_frames × width` displacements, padded with 0.
    pub targets: Vec<f64>,
    pub frame_lengths: Vec<usize>,
    /// `size × max_frames`.
    pub gate_targets: Vec<f64>,
    /// `size × max_frames`.
    pub mask: Vec<bool>,
    pub max_text: usize,
    pub max_frames: usize,
    pub width: usize,
}

impl Batch {
    pub fn from_clips(clips: &[&NormalizedClip]) -> Result<Self> {
        Self::padded(clips, 0, 0)
    }

    /// Like [`Batch::from_clips`] with extra padding beyond the longest clip.
    pub fn padded(clips: &[&NormalizedClip], extra_text: usize, extra_frames: usize) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::Contract("cannot batch zero clips".into()))?;
        let width = first.displacements.frames.width();
        let max_text = clips.iter().map(|c| c.tokens.len()).max().unwrap_or(0) + extra_text;
        let max_frames = clips.iter().map(|c| c.num_frames()).max().unwrap_or(0) + extra_frames;
        let b = clips.len();
        let mut batch = Batch {
            clip_ids: Vec::with_capacity(b),
            tokens: vec![0; b * max_text],
            text_lengths: Vec::with_capacity(b),
            targets: vec![0.0; b * max_frames * width],
            frame_lengths: Vec::with_capacity(b),
            gate_targets: vec![1.0; b * max_frames],
            mask: vec![false; b * max_frames],
            max_text,
            max_frames,
            width,
        };
        for (i, c) in clips.iter().enumerate() {
            let frames = &c.displacements.frames;
            if frames.width() != width {
                return Err(Error::shape(
                    "batch",
                    format!("clip {} has width {}, batch width {width}", c.clip_id, frames.width()),
                ));
            }
            if c.tokens.is_empty() || frames.is_empty() {
                return Err(Error::Contract(format!(
                    "clip {} has no tokens or no frames",
                    c.clip_id
                )));
            }
            let n = frames.rows();
            batch.clip_ids.push(c.clip_id.clone());
            batch.tokens[i * max_text..i * max_text + c.tokens.len()].copy_from_slice(&c.tokens);
            batch.text_lengths.push(c.tokens.len());
            let off = i * max_frames * width;
            batch.targets[off..off + n * width].copy_from_slice(frames.as_slice());
            batch.frame_lengths.push(n);
            for t in 0..n {
                batch.mask[i * max_frames + t] = true;
                batch.gate_targets[i * max_frames + t] = if t + 1 == n { 1.0 } else { 0.0 };
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip_ids.is_empty()
    }

    /// Real (unpadded) tokens of clip `i`.
    pub fn clip_tokens(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.max_text..i * self.max_text + self.text_lengths[i]]
    }

    /// The first `rows` target rows of clip `i`, as a `(rows, width)` array.
    pub fn clip_targets<T: Real>(&self, i: usize, rows: usize) -> Array<T> {
        let off = i * self.max_frames * self.width;
        let data = self.targets[off..off + rows * self.width]
            .iter()
            .map(|&v| T::of(v))
            .collect();
        Array::new(vec![rows, self.width], data).expect("rows within batch")
    }

    /// Per-element landmark mask of clip `i` over its first `rows` frames.
    pub fn clip_element_mask<T: Real>(&self, i: usize, rows: usize) -> Vec<T> {
        self.mask[i * self.max_frames..i * self.max_frames + rows]
            .iter()
            .flat_map(|&m| std::iter::repeat(if m { T::one() } else { T::zero() }).take(self.width))
            .collect()
    }

    pub fn clip_gate_targets<T: Real>(&self, i: usize, rows: usize) -> Vec<T> {
        self.gate_targets[i * self.max_frames..i * self.max_frames + rows]
            .iter()
            .map(|&v| T::of(v))
            .collect()
    }

    /// Number of real landmark values in the batch.
    pub fn real_elements(&self) -> usize {
        self.frame_lengths.iter().sum::<usize>() * self.width
    }
}

/// Seeded shuffle for `(seed, epoch)`, then consecutive chunks of `batch_size`.
/// The last batch may be smaller.
pub fn make_batches(clips: &[&NormalizedClip], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if clips.is_empty() {
        return Err(Error::Contract("cannot batch an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_clips(&idx.iter().map(|&i| clips[i]).collect::<Vec<_>>()))
        .collect()
}

/// Batches in dataset order, for evaluation.
pub fn sequential_batches(clips: &[&NormalizedClip], batch_size: usize) -> Result<Vec<Batch>> {
    if clips.is_empty() {
        return Err(Error::Contract("cannot batch an empty split".into()));
    }
    clips.chunks(batch_size.max(1)).map(Batch::from_clips).collect()
}
