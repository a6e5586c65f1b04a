use serde::{Deserialize, Serialize};

use crate::corpus::LandmarkSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    #[default]
    Toy,
}

/// Architecture hyperparameters. Flags and dimensions are independent;
/// `preset` only records which size family the dimensions came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    pub charset_size: usize,
    pub embedding_dim: usize,
    pub encoder_conv_layers: usize,
    pub encoder_conv_filters: usize,
    pub encoder_conv_kernel: usize,
    /// Total width of the bidirectional encoder LSTM (half per direction).
    pub encoder_lstm_dim: usize,
    pub decoder_lstm_dims: [usize; 2],
    pub attention_dim: usize,
    pub location_filters: usize,
    pub location_kernel: usize,
    pub output_width: usize,
    pub use_prenet: bool,
    pub use_postnet: bool,
    pub prenet_dims: Vec<usize>,
    pub postnet_layers: usize,
    pub postnet_filters: usize,
    pub postnet_kernel: usize,
    pub encoder_dropout: f64,
    pub prenet_dropout: f64,
    pub postnet_dropout: f64,
    /// Dropout on the second decoder LSTM output.
    pub decoder_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy(30, LandmarkSet::Lips.width())
    }
}

impl ModelConfig {
    /// Tacotron-2 sized network.
    pub fn full(charset_size: usize, output_width: usize) -> Self {
        Self {
            preset: Preset::Full,
            charset_size,
            embedding_dim: 512,
            encoder_conv_layers: 3,
            encoder_conv_filters: 512,
            encoder_conv_kernel: 5,
            encoder_lstm_dim: 512,
            decoder_lstm_dims: [1024, 1024],
            attention_dim: 128,
            location_filters: 32,
            location_kernel: 31,
            output_width,
            use_prenet: false,
            use_postnet: false,
            prenet_dims: vec![256, 256],
            postnet_layers: 5,
            postnet_filters: 512,
            postnet_kernel: 5,
            encoder_dropout: 0.5,
            prenet_dropout: 0.5,
            postnet_dropout: 0.5,
            decoder_dropout: 0.1,
        }
    }

    /// Desk-scale network for tests and quick experiments.
    pub fn toy(charset_size: usize, output_width: usize) -> Self {
        Self {
            preset: Preset::Toy,
            charset_size,
            embedding_dim: 32,
            encoder_conv_layers: 1,
            encoder_conv_filters: 32,
            encoder_conv_kernel: 5,
            encoder_lstm_dim: 32,
            decoder_lstm_dims: [64, 64],
            attention_dim: 32,
            location_filters: 8,
            location_kernel: 7,
            output_width,
            use_prenet: false,
            use_postnet: false,
            prenet_dims: vec![32, 32],
            postnet_layers: 5,
            postnet_filters: 32,
            postnet_kernel: 5,
            encoder_dropout: 0.0,
            prenet_dropout: 0.0,
            postnet_dropout: 0.0,
            decoder_dropout: 0.0,
        }
    }

    pub fn preset(preset: Preset, charset_size: usize, output_width: usize) -> Self {
        match preset {
            Preset::Full => Self::full(charset_size, output_width),
            Preset::Toy => Self::toy(charset_size, output_width),
        }
    }

    /// Width of one encoder memory row.
    pub fn memory_dim(&self) -> usize {
        self.encoder_lstm_dim
    }

    /// Width of the decoder input taken from the previous frame.
    pub fn frame_input_dim(&self) -> usize {
        if self.use_prenet {
            *self.prenet_dims.last().unwrap_or(&self.output_width)
        } else {
            self.output_width
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("model config: {m}")));
        if LandmarkSet::from_width(self.output_width).is_none() {
            return bad(format!("output width {} is neither 60 nor 204", self.output_width));
        }
        let dims = [
            ("charset_size", self.charset_size),
            ("embedding_dim", self.embedding_dim),
            ("encoder_lstm_dim", self.encoder_lstm_dim),
            ("decoder_lstm_dims[0]", self.decoder_lstm_dims[0]),
            ("decoder_lstm_dims[1]", self.decoder_lstm_dims[1]),
            ("attention_dim", self.attention_dim),
            ("location_filters", self.location_filters),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.encoder_lstm_dim % 2 != 0 {
            return bad("encoder_lstm_dim must be even (split across two directions)".into());
        }
        if self.encoder_conv_layers > 0 && self.encoder_conv_filters == 0 {
            return bad("encoder_conv_filters must be positive".into());
        }
        for (name, k) in [
            ("encoder_conv_kernel", self.encoder_conv_kernel),
            ("location_kernel", self.location_kernel),
            ("postnet_kernel", self.postnet_kernel),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.use_prenet && (self.prenet_dims.is_empty() || self.prenet_dims.contains(&0)) {
            return bad("prenet_dims must be non-empty and positive".into());
        }
        if self.use_postnet && (self.postnet_layers < 2 || self.postnet_filters == 0) {
            return bad("postnet needs at least 2 layers and positive filters".into());
        }
        for (name, p) in [
            ("encoder_dropout", self.encoder_dropout),
            ("prenet_dropout", self.prenet_dropout),
            ("postnet_dropout", self.postnet_dropout),
            ("decoder_dropout", self.decoder_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1)"));
            }
        }
        if self.preset == Preset::Toy {
            let full = Self::full(self.charset_size, self.output_width);
            if !self.dims_within(&full) {
                return bad("toy preset dimensions exceed the full preset".into());
            }
        }
        Ok(())
    }

    fn dims_within(&self, other: &Self) -> bool {
        self.embedding_dim <= other.embedding_dim
            && self.encoder_conv_layers <= other.encoder_conv_layers
            && self.encoder_conv_filters <= other.encoder_conv_filters
            && self.encoder_conv_kernel <= other.encoder_conv_kernel
            && self.encoder_lstm_dim <= other.encoder_lstm_dim
            && self.decoder_lstm_dims[0] <= other.decoder_lstm_dims[0]
            && self.decoder_lstm_dims[1] <= other.decoder_lstm_dims[1]
            && self.attention_dim <= other.attention_dim
            && self.location_filters <= other.location_filters
            && self.location_kernel <= other.location_kernel
            && self.postnet_layers <= other.postnet_layers
            && self.postnet_filters <= other.postnet_filters
            && self.prenet_dims.iter().zip(&other.prenet_dims).all(|(a, b)| a <= b)
    }

    /// Names of fields whose values differ from `other`.
    pub fn differences(&self, other: &Self) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        match (a, b) {
            (serde_json::Value::Object(a), serde_json::Value::Object(b)) => a
                .iter()
                .filter(|(k, v)| b.get(*k) != Some(v))
                .map(|(k, _)| k.clone())
                .collect(),
            _ => unreachable!("config is a JSON object"),
        }
    }
}
