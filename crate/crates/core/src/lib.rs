//! Streaming windowed-attention neural audio codec with a self-contained
//! numeric core.
//!
//! The crate is organized bottom-up: [`tensorcore`] provides tensors,
//! reverse-mode autodiff and the optimizer; [`signal`] the spectral
//! transforms and losses; [`winformer`] sliding-window Transformer blocks
//! with a streaming cache; [`quantizer`] the reparameterized single-layer
//! vector quantizer; [`noise`] frame-masking noise injection and its
//! Fourier-domain verifier; [`codec`] the model, staged training and
//! streaming sessions; [`tokenstats`] rank–frequency analysis of emitted
//! tokens; [`toolkit`] WAV I/O, corpus generation, checkpoints and config.

pub mod audio;
pub mod error;
pub mod gradsuite;
pub mod signal;
pub mod tokenstats;
pub mod tensorcore;
pub mod winformer;
pub mod quantizer;
pub mod noise;
pub mod codec;
pub mod toolkit;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
