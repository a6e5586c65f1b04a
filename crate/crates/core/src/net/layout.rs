use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::{Array, ParamStore, Real};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub buffer: bool,
}

fn xavier(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Slot {
    Slot {
        name,
        shape,
        init: Init::Xavier { fan_in, fan_out },
        buffer: false,
    }
}

fn fixed(name: String, shape: Vec<usize>, init: Init, buffer: bool) -> Slot {
    Slot {
        name,
        shape,
        init,
        buffer,
    }
}

fn conv_bn(out: &mut Vec<Slot>, prefix: &str, c_in: usize, c_out: usize, k: usize) {
    out.push(xavier(
        format!("{prefix}.weight"),
        vec![c_out, c_in, k],
        c_in * k,
        c_out * k,
    ));
    out.push(fixed(format!("{prefix}.bn.gamma"), vec![c_out], Init::Ones, false));
    out.push(fixed(format!("{prefix}.bn.beta"), vec![c_out], Init::Zeros, false));
    out.push(fixed(
        format!("{prefix}.bn.running_mean"),
        vec![c_out],
        Init::Zeros,
        true,
    ));
    out.push(fixed(format!("{prefix}.bn.running_var"), vec![c_out], Init::Ones, true));
}

fn lstm(out: &mut Vec<Slot>, prefix: &str, input: usize, hidden: usize) {
    out.push(xavier(
        format!("{prefix}.weight"),
        vec![input + hidden, 4 * hidden],
        input + hidden,
        hidden,
    ));
    out.push(fixed(format!("{prefix}.bias"), vec![4 * hidden], Init::Zeros, false));
}

fn linear(out: &mut Vec<Slot>, prefix: &str, input: usize, output: usize, bias: bool) {
    out.push(xavier(format!("{prefix}.weight"), vec![input, output], input, output));
    if bias {
        out.push(fixed(format!("{prefix}.bias"), vec![output], Init::Zeros, false));
    }
}

/// Every parameter and buffer of the network, in a fixed construction order.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<Slot> {
    let mut s = Vec::new();
    let e = cfg.embedding_dim;
    s.push(xavier(
        "encoder.embedding".into(),
        vec![cfg.charset_size, e],
        cfg.charset_size,
        e,
    ));
    let mut width = e;
    for i in 0..cfg.encoder_conv_layers {
        conv_bn(
            &mut s,
            &format!("encoder.conv{i}"),
            width,
            cfg.encoder_conv_filters,
            cfg.encoder_conv_kernel,
        );
        width = cfg.encoder_conv_filters;
    }
    let half = cfg.encoder_lstm_dim / 2;
    lstm(&mut s, "encoder.lstm_fwd", width, half);
    lstm(&mut s, "encoder.lstm_bwd", width, half);

    let mem = cfg.memory_dim();
    let [d0, d1] = cfg.decoder_lstm_dims;
    let a = cfg.attention_dim;
    linear(&mut s, "attention.query", d0, a, false);
    linear(&mut s, "attention.memory", mem, a, false);
    s.push(xavier(
        "attention.location_conv.weight".into(),
        vec![cfg.location_filters, 2, cfg.location_kernel],
        2 * cfg.location_kernel,
        cfg.location_filters * cfg.location_kernel,
    ));
    linear(&mut s, "attention.location_dense", cfg.location_filters, a, false);
    linear(&mut s, "attention.v", a, 1, false);

    if cfg.use_prenet {
        let mut w = cfg.output_width;
        for (i, &d) in cfg.prenet_dims.iter().enumerate() {
            linear(&mut s, &format!("prenet.fc{i}"), w, d, false);
            w = d;
        }
    }
    lstm(&mut s, "decoder.lstm0", cfg.frame_input_dim() + mem, d0);
    lstm(&mut s, "decoder.lstm1", d0 + mem, d1);
    linear(&mut s, "decoder.projection", d1 + mem, cfg.output_width, true);
    linear(&mut s, "gate", d1 + mem, 1, true);

    if cfg.use_postnet {
        let mut w = cfg.output_width;
        for i in 0..cfg.postnet_layers {
            let out = if i + 1 == cfg.postnet_layers {
                cfg.output_width
            } else {
                cfg.postnet_filters
            };
            conv_bn(&mut s, &format!("postnet.conv{i}"), w, out, cfg.postnet_kernel);
            w = out;
        }
    }
    s
}

/// Fresh parameters drawn from a seeded generator.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for slot in layout(cfg) {
        let n: usize = slot.shape.iter().product();
        let data: Vec<T> = match slot.init {
            Init::Xavier { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect()
            }
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
        };
        let value = Array::new(slot.shape, data)?;
        if slot.buffer {
            store.insert_buffer(&slot.name, value)?;
        } else {
            store.insert(&slot.name, value)?;
        }
    }
    Ok(store)
}
