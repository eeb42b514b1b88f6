//! The codec proper: framing encoder, quantizer and delayed-lookahead
//! decoder, staged training and streaming sessions.

mod disc;
mod model;
mod stream;
mod train;

pub use disc::{adv_losses, AdvLosses, DiscOutput, FrameDiscriminator};
pub use model::{decoder_graph, encoder_graph, init_params, latent_reg, pad_to_frames, Codec, Encoded};
pub use stream::{stream_check, StreamDecoder, StreamEncoder, StreamReport};
pub use train::{
    sample_batch, stage_loss, Breakdown, LossParts, LossWeights, StagePlan, StepMetrics, Trainer,
    METRICS_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseConfig;
use crate::signal::SpecScale;
use crate::winformer::{StackConfig, WindowSpec};

/// Parameter groups, the first dotted segment of every parameter name.
pub const ENCODER: &str = "encoder";
pub const QUANTIZER: &str = "quantizer";
pub const DECODER: &str = "decoder";
pub const DISC: &str = "disc";

fn default_true() -> bool {
    true
}

fn default_disc_hidden() -> usize {
    64
}

fn default_disc_window() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Samples per frame (downsample factor).
    pub r: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "D")]
    pub code_dim: usize,
    #[serde(rename = "K")]
    pub codebook_size: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub enc_window: WindowSpec,
    pub dec_window: WindowSpec,
    pub noise: NoiseConfig,
    #[serde(default = "default_true")]
    pub rotary: bool,
    #[serde(default = "default_disc_hidden")]
    pub disc_hidden: usize,
    #[serde(default = "default_disc_window")]
    pub disc_window: usize,
}

impl Default for ModelConfig {
    /// Desk-scale model: 16 kHz, 50 tokens/s, H=64, D=8, K=256.
    fn default() -> Self {
        ModelConfig {
            sample_rate: 16000,
            r: 320,
            hidden: 64,
            code_dim: 8,
            codebook_size: 256,
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            enc_window: WindowSpec { left: 32, right: 0 },
            dec_window: WindowSpec { left: 32, right: 2 },
            noise: NoiseConfig::default(),
            rotary: true,
            disc_hidden: 64,
            disc_window: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_rate", self.sample_rate as usize),
            ("r", self.r),
            ("H", self.hidden),
            ("D", self.code_dim),
            ("K", self.codebook_size),
            ("heads", self.heads),
            ("disc_hidden", self.disc_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.enc_window.right != 0 {
            return Err(Error::Config("encoder window must be causal (right = 0)".into()));
        }
        self.enc_stack().validate()?;
        self.dec_stack().validate()?;
        self.noise.validate()?;
        self.disc_scale().validate(self.sample_rate)
    }

    /// Tokens per second.
    pub fn token_rate(&self) -> f64 {
        self.sample_rate as f64 / self.r as f64
    }

    pub fn enc_stack(&self) -> StackConfig {
        StackConfig {
            hidden: self.hidden,
            heads: self.heads,
            layers: self.enc_layers,
            window: self.enc_window,
            rotary: self.rotary,
        }
    }

    /// The decoder stack itself is causal; its lookahead comes from reading
    /// the output `right` positions late.
    pub fn dec_stack(&self) -> StackConfig {
        StackConfig {
            hidden: self.hidden,
            heads: self.heads,
            layers: self.dec_layers,
            window: WindowSpec {
                left: self.dec_window.left,
                right: 0,
            },
            rotary: self.rotary,
        }
    }

    /// Decoder algorithmic latency in samples.
    pub fn latency_samples(&self) -> usize {
        self.dec_window.right * self.r
    }

    pub fn latency_seconds(&self) -> f64 {
        self.latency_samples() as f64 / self.sample_rate as f64
    }

    pub fn disc_scale(&self) -> SpecScale {
        SpecScale::for_window(self.disc_window, self.sample_rate)
    }

    pub fn bitrate(&self) -> f64 {
        bitrate(self.token_rate(), self.codebook_size)
    }
}

/// Bits per token.
pub fn bits_per_token(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// `token_rate · ⌈log2 K⌉` bits per second.
pub fn bitrate(token_rate: f64, k: usize) -> f64 {
    token_rate * bits_per_token(k) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitrate_examples() {
        assert_eq!(bitrate(50.0, 131072), 850.0);
        assert_eq!(bitrate(100.0, 131072), 1700.0);
        assert_eq!(bitrate(25.0, 131072), 425.0);
        assert_eq!(bitrate(50.0, 1), 0.0);
        assert_eq!(bits_per_token(256), 8);
        assert_eq!(bits_per_token(257), 9);
        assert_eq!(bits_per_token(2), 1);
    }

    #[test]
    fn latency_example() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.latency_samples(), 640);
        assert!((cfg.latency_seconds() - 0.040).abs() < 1e-15);
        assert_eq!(cfg.token_rate(), 50.0);
        assert_eq!(cfg.bitrate(), 400.0);
    }

    #[test]
    fn config_json_uses_short_names_and_rejects_unknown_keys() {
        let cfg = ModelConfig::default();
        let json = serde_json::to_value(cfg).unwrap();
        assert_eq!(json["H"], 64);
        assert_eq!(json["K"], 256);
        let back: ModelConfig = serde_json::from_value(json.clone()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = json;
        bad["hidden"] = 3.into();
        assert!(serde_json::from_value::<ModelConfig>(bad).is_err());
    }

    #[test]
    fn validation_errors() {
        let cfg = ModelConfig { heads: 3, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::default();
        cfg.enc_window.right = 1;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
