//! Core library for vector-quantized prosody representations.
//!
//! The crate is organized around a small number of self-contained layers:
//!
//! * [`dsp`] — waveform I/O, STFT, log-mel features, MFCCs, and YIN pitch
//!   tracking. Everything downstream consumes these features.
//! * [`vq`] — the vector-quantization primitives: codebook, nearest-neighbour
//!   lookup, the three-term loss, the straight-through estimator, and the
//!   codebook-update counter used to attribute learned structure to latent
//!   dimensions.
//! * [`net`] — a hand-rolled prosody encoder/decoder (conv stack, residual
//!   blocks, GRU) with explicit forward caching and backward passes. No
//!   autograd framework is used; gradients are derived and implemented
//!   directly so the quantizer's gradient routing stays inspectable.
//! * [`metrics`] — objective evaluation: gross pitch error, F0 frame error,
//!   mel-cepstral distortion (with optional DTW alignment), and
//!   latent/factor correlation analysis.
//! * [`train`] — synthetic corpus generation, the SGD training loop, and the
//!   disentanglement / style-control experiments built on top of it.
//! * [`ckpt`] — a small binary checkpoint container for model parameters,
//!   counter state, and configuration.

pub mod ckpt;
pub mod dsp;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod net;
pub mod report;
pub mod train;
pub mod vq;

pub use error::{Result, VqpError};
