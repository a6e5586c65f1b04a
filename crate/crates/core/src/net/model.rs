use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autodiff::{Array, Graph, ParamStore, Real, Var};
use crate::{Error, FrameMatrix, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Batch statistics observed by a training-mode batch norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-forward mode: dropout randomness and batch-norm bookkeeping.
///
/// In eval mode dropout is the identity and batch norm uses running
/// statistics. Batch norm of a frozen layer always runs in eval mode.
#[derive(Debug)]
pub struct Pass {
    train: bool,
    rng: ChaCha8Rng,
    bn: Vec<BnUpdate>,
}

impl Pass {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            bn: Vec::new(),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn)
    }
}

/// Folds observed batch statistics into the running buffers.
pub fn apply_bn_updates<T: Real>(params: &mut ParamStore<T>, updates: &[BnUpdate]) -> Result<()> {
    let m = BN_MOMENTUM;
    for u in updates {
        for (suffix, batch) in [("running_mean", &u.mean), ("running_var", &u.var)] {
            let run = params.value_mut(&format!("{}.bn.{suffix}", u.prefix))?;
            for (r, &b) in run.data_mut().iter_mut().zip(batch.iter()) {
                *r = T::of((1.0 - m) * r.as_f64() + m * b);
            }
        }
    }
    Ok(())
}

fn dropout<T: Real>(g: &mut Graph<T>, x: Var, p: f64, pass: &mut Pass) -> Result<Var> {
    if pass.train && p > 0.0 {
        g.tape.dropout(x, p, &mut pass.rng)
    } else {
        Ok(x)
    }
}

fn conv_bn<T: Real>(g: &mut Graph<T>, prefix: &str, x: Var, tanh: bool, relu: bool, pass: &mut Pass) -> Result<Var> {
    let w = g.param(&format!("{prefix}.weight"))?;
    // No conv bias: batch norm removes any per-channel offset.
    let y = g.tape.conv1d(x, w, None)?;
    let gamma_name = format!("{prefix}.bn.gamma");
    let gamma = g.param(&gamma_name)?;
    let beta = g.param(&format!("{prefix}.bn.beta"))?;
    let eps = T::of(BN_EPS);
    let y = if pass.train && !g.params().is_frozen(&gamma_name) {
        let (y, stats) = g.tape.batch_norm_train(y, gamma, beta, eps)?;
        pass.bn.push(BnUpdate {
            prefix: prefix.to_string(),
            mean: stats.mean.iter().map(|v| v.as_f64()).collect(),
            var: stats.var.iter().map(|v| v.as_f64()).collect(),
        });
        y
    } else {
        let params = g.params();
        let mean = params.value(&format!("{prefix}.bn.running_mean"))?.data().to_vec();
        let var = params.value(&format!("{prefix}.bn.running_var"))?.data().to_vec();
        g.tape.batch_norm_eval(y, gamma, beta, &mean, &var, eps)?
    };
    Ok(if tanh {
        g.tape.tanh(y)
    } else if relu {
        g.tape.relu(y)
    } else {
        y
    })
}

fn lstm_step<T: Real>(g: &mut Graph<T>, prefix: &str, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let w = g.param(&format!("{prefix}.weight"))?;
    let b = g.param(&format!("{prefix}.bias"))?;
    let out = g.tape.lstm_cell(x, h, c, w, b)?;
    let hd = g.tape.shape(h)[1];
    Ok((g.tape.slice(out, 1, 0, hd)?, g.tape.slice(out, 1, hd, hd)?))
}

fn linear<T: Real>(g: &mut Graph<T>, prefix: &str, x: Var, bias: bool) -> Result<Var> {
    let w = g.param(&format!("{prefix}.weight"))?;
    let y = g.tape.matmul(x, w)?;
    if bias {
        let b = g.param(&format!("{prefix}.bias"))?;
        g.tape.add_row(y, b)
    } else {
        Ok(y)
    }
}

fn zeros<T: Real>(g: &mut Graph<T>, rows: usize, cols: usize) -> Var {
    g.tape.constant(Array::zeros(&[rows, cols]))
}

/// Character encoder: embedding, conv stack, one bidirectional LSTM pass.
/// Returns memory of shape `(tokens.len(), memory_dim)`.
pub fn encoder_forward<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, tokens: &[usize], pass: &mut Pass) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Contract("encoder needs at least one token".into()));
    }
    let table = g.param("encoder.embedding")?;
    let mut x = g.tape.embedding(table, tokens)?;
    for i in 0..cfg.encoder_conv_layers {
        x = conv_bn(g, &format!("encoder.conv{i}"), x, false, true, pass)?;
        x = dropout(g, x, cfg.encoder_dropout, pass)?;
    }
    let n = tokens.len();
    let half = cfg.encoder_lstm_dim / 2;
    let rows: Vec<Var> = (0..n).map(|t| g.tape.slice(x, 0, t, 1)).collect::<Result<_>>()?;
    let run = |g: &mut Graph<T>, prefix: &str, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Var>> {
        let mut out = vec![None; n];
        let (mut h, mut c) = (zeros(g, 1, half), zeros(g, 1, half));
        for t in order {
            (h, c) = lstm_step(g, prefix, rows[t], h, c)?;
            out[t] = Some(h);
        }
        Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
    };
    let fwd = run(g, "encoder.lstm_fwd", &mut (0..n))?;
    let bwd = run(g, "encoder.lstm_bwd", &mut (0..n).rev())?;
    let fwd = g.tape.concat(&fwd, 0)?;
    let bwd = g.tape.concat(&bwd, 0)?;
    g.tape.concat(&[fwd, bwd], 1)
}

/// Encoder output plus its attention projection, computed once per utterance.
#[derive(Debug, Clone, Copy)]
pub struct Memory {
    pub values: Var,
    processed: Var,
    pub steps: usize,
}

pub fn prepare_memory<T: Real>(g: &mut Graph<T>, values: Var) -> Result<Memory> {
    let steps = g.tape.shape(values)[0];
    let processed = linear(g, "attention.memory", values, false)?;
    Ok(Memory {
        values,
        processed,
        steps,
    })
}

/// Location-sensitive additive attention.
///
/// `query (1, D)`, alignments `(1, T_in)`. Returns `(context (1, E), alignment (1, T_in))`.
pub fn attention_step<T: Real>(
    g: &mut Graph<T>,
    query: Var,
    memory: &Memory,
    prev_alignment: Var,
    cum_alignment: Var,
) -> Result<(Var, Var)> {
    let want = [1, memory.steps];
    for a in [prev_alignment, cum_alignment] {
        if g.tape.shape(a) != want {
            return Err(Error::shape(
                "attention",
                format!(
                    "alignment shape {:?} but memory has {} rows",
                    g.tape.shape(a),
                    memory.steps
                ),
            ));
        }
    }
    let q = linear(g, "attention.query", query, false)?;
    let prev = g.tape.transpose(prev_alignment)?;
    let cum = g.tape.transpose(cum_alignment)?;
    let stacked = g.tape.concat(&[prev, cum], 1)?;
    let conv_w = g.param("attention.location_conv.weight")?;
    let loc = g.tape.conv1d(stacked, conv_w, None)?;
    let loc = linear(g, "attention.location_dense", loc, false)?;
    let e = g.tape.add(memory.processed, loc)?;
    let e = g.tape.add_row(e, q)?;
    let e = g.tape.tanh(e);
    let e = linear(g, "attention.v", e, false)?;
    let e = g.tape.reshape(e, &want)?;
    let alignment = g.tape.softmax(e)?;
    let context = g.tape.matmul(alignment, memory.values)?;
    Ok((context, alignment))
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: [Var; 2],
    pub c: [Var; 2],
    pub context: Var,
    pub prev_alignment: Var,
    pub cum_alignment: Var,
    pub prev_frame: Var,
}

/// Zero state whose previous frame is the all-zero go frame.
pub fn initial_state<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, memory: &Memory) -> DecoderState {
    let [d0, d1] = cfg.decoder_lstm_dims;
    DecoderState {
        h: [zeros(g, 1, d0), zeros(g, 1, d1)],
        c: [zeros(g, 1, d0), zeros(g, 1, d1)],
        context: zeros(g, 1, cfg.memory_dim()),
        prev_alignment: zeros(g, 1, memory.steps),
        cum_alignment: zeros(g, 1, memory.steps),
        prev_frame: zeros(g, 1, cfg.output_width),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub frame: Var,
    pub gate: Var,
    pub state: DecoderState,
}

/// One 12.5 ms decoder step from `state.prev_frame`.
pub fn decoder_step<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    state: &DecoderState,
    memory: &Memory,
    pass: &mut Pass,
) -> Result<StepOutput> {
    if g.tape.shape(state.prev_frame) != [1, cfg.output_width] {
        return Err(Error::shape(
            "decoder",
            format!(
                "previous frame shape {:?}, expected [1, {}]",
                g.tape.shape(state.prev_frame),
                cfg.output_width
            ),
        ));
    }
    let mut x = state.prev_frame;
    if cfg.use_prenet {
        for i in 0..cfg.prenet_dims.len() {
            x = linear(g, &format!("prenet.fc{i}"), x, false)?;
            x = g.tape.relu(x);
            x = dropout(g, x, cfg.prenet_dropout, pass)?;
        }
    }
    let input0 = g.tape.concat(&[x, state.context], 1)?;
    let (h0, c0) = lstm_step(g, "decoder.lstm0", input0, state.h[0], state.c[0])?;
    let (context, alignment) = attention_step(g, h0, memory, state.prev_alignment, state.cum_alignment)?;
    let cum_alignment = g.tape.add(state.cum_alignment, alignment)?;
    let input1 = g.tape.concat(&[h0, context], 1)?;
    let (h1, c1) = lstm_step(g, "decoder.lstm1", input1, state.h[1], state.c[1])?;
    let h1_out = dropout(g, h1, cfg.decoder_dropout, pass)?;
    let out = g.tape.concat(&[h1_out, context], 1)?;
    let frame = linear(g, "decoder.projection", out, true)?;
    let gate = linear(g, "gate", out, true)?;
    Ok(StepOutput {
        frame,
        gate,
        state: DecoderState {
            h: [h0, h1],
            c: [c0, c1],
            context,
            prev_alignment: alignment,
            cum_alignment,
            prev_frame: frame,
        },
    })
}

/// Five-layer convolutional residual over `frames (T, W)`.
pub fn postnet_forward<T: Real>(g: &mut Graph<T>, cfg: &ModelConfig, frames: Var, pass: &mut Pass) -> Result<Var> {
    if !cfg.use_postnet {
        return Err(Error::Contract("postnet is disabled in this model config".into()));
    }
    let mut x = frames;
    for i in 0..cfg.postnet_layers {
        let last = i + 1 == cfg.postnet_layers;
        x = conv_bn(g, &format!("postnet.conv{i}"), x, !last, false, pass)?;
        x = dropout(g, x, cfg.postnet_dropout, pass)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Decoder frames `(T_out, W)`.
    pub frames: Var,
    /// Gate logits `(T_out, 1)`.
    pub gate: Var,
    /// Attention weights `(T_out, T_in)`.
    pub alignments: Var,
    /// Real rows of `frames` plus the postnet residual, when the postnet is enabled.
    pub postnet_frames: Option<Var>,
}

/// Runs the decoder over `targets (T_out, W)`, feeding target row `t − 1`
/// (the go frame at `t = 0`) into step `t`.
pub fn forward_teacher_forced<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    tokens: &[usize],
    targets: &Array<T>,
    pass: &mut Pass,
) -> Result<Outputs> {
    let rows = targets.dims2().map_or(0, |(r, _)| r);
    forward_padded(g, cfg, tokens, targets, rows, pass)
}

/// Teacher forcing over zero-padded targets: the decoder runs every row of
/// `targets`, while the postnet only sees the first `real_frames` rows so
/// that padding never leaks into real outputs.
pub fn forward_padded<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    tokens: &[usize],
    targets: &Array<T>,
    real_frames: usize,
    pass: &mut Pass,
) -> Result<Outputs> {
    let steps = match targets.dims2() {
        Some((r, w)) if w == cfg.output_width && r > 0 && (1..=r).contains(&real_frames) => r,
        _ => {
            return Err(Error::shape(
                "teacher forcing",
                format!(
                    "target shape {:?} with {real_frames} real frames, expected (T > 0, {})",
                    targets.shape(),
                    cfg.output_width
                ),
            ))
        }
    };
    let values = encoder_forward(g, cfg, tokens, pass)?;
    let memory = prepare_memory(g, values)?;
    let mut state = initial_state(g, cfg, &memory);
    let target = g.tape.constant(targets.clone());
    let (mut frames, mut gates, mut aligns) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..steps {
        if t > 0 {
            state.prev_frame = g.tape.slice(target, 0, t - 1, 1)?;
        }
        let out = decoder_step(g, cfg, &state, &memory, pass)?;
        frames.push(out.frame);
        gates.push(out.gate);
        aligns.push(out.state.prev_alignment);
        state = out.state;
    }
    let frames = g.tape.concat(&frames, 0)?;
    let gate = g.tape.concat(&gates, 0)?;
    let alignments = g.tape.concat(&aligns, 0)?;
    let postnet_frames = if cfg.use_postnet {
        let real = if real_frames == steps {
            frames
        } else {
            g.tape.slice(frames, 0, 0, real_frames)?
        };
        let residual = postnet_forward(g, cfg, real, pass)?;
        Some(g.tape.add(real, residual)?)
    } else {
        None
    };
    Ok(Outputs {
        frames,
        gate,
        alignments,
        postnet_frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferOptions {
    pub gate_threshold: f64,
    pub max_frames: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            gate_threshold: 0.5,
            max_frames: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Predicted displacements, one row per 12.5 ms frame.
    pub frames: FrameMatrix,
    /// Attention weights, one row per emitted frame.
    pub alignments: FrameMatrix,
    pub stopped_by_gate: bool,
}

impl Inference {
    pub fn duration_seconds(&self) -> f64 {
        self.frames.rows() as f64 / crate::FRAME_RATE
    }
}

/// Autoregressive generation with dropout off. The frame whose gate fires
/// is the last one emitted.
pub fn infer<T: Real>(
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    tokens: &[usize],
    opts: &InferOptions,
) -> Result<Inference> {
    let mut g = Graph::inference(params);
    let mut pass = Pass::eval();
    let values = encoder_forward(&mut g, cfg, tokens, &mut pass)?;
    let memory = prepare_memory(&mut g, values)?;
    let mut state = initial_state(&mut g, cfg, &memory);
    let mut frames = Vec::new();
    let mut aligns = Vec::new();
    let mut stopped = false;
    while frames.len() < opts.max_frames {
        let out = decoder_step(&mut g, cfg, &state, &memory, &mut pass)?;
        frames.push(out.frame);
        aligns.extend(g.value(out.state.prev_alignment).data().iter().map(|v| v.as_f64()));
        state = out.state;
        let logit = g.value(out.gate).item().as_f64();
        if 1.0 / (1.0 + (-logit).exp()) > opts.gate_threshold {
            stopped = true;
            break;
        }
    }
    let width = cfg.output_width;
    if frames.is_empty() {
        return Ok(Inference {
            frames: FrameMatrix::zeros(0, width),
            alignments: FrameMatrix::zeros(0, memory.steps),
            stopped_by_gate: false,
        });
    }
    let mut out = g.tape.concat(&frames, 0)?;
    if cfg.use_postnet {
        let residual = postnet_forward(&mut g, cfg, out, &mut pass)?;
        out = g.tape.add(out, residual)?;
    }
    Ok(Inference {
        frames: FrameMatrix::new(width, g.value(out).to_f64_vec())?,
        alignments: FrameMatrix::new(memory.steps, aligns)?,
        stopped_by_gate: stopped,
    })
}
