//! The prosody encoder network (conv stack, residual blocks, VQ bottleneck,
//! GRU summarizer, projection) and its mirrored toy decoder, with explicit
//! forward and backward passes.

pub mod layers;
mod model;

pub use model::{
    BatchInput, FrozenQuant, LossBreakdown, Model, NetConfig, ProsodyLatent,
};

/// Architecture of the encoder. Paper-scale widths (512/128/256) are
/// reachable through these fields; desk defaults are 32/32/64.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub conv_channels: usize,
    pub kernel_sizes: [usize; 4],
    pub strides: [usize; 4],
    pub n_residual_blocks: usize,
    pub latent_dim: usize,
    pub gru_units: usize,
    pub proj_units: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            conv_channels: 32,
            kernel_sizes: [3, 4, 3, 4],
            strides: [1, 2, 1, 2],
            n_residual_blocks: 2,
            latent_dim: 16,
            gru_units: 32,
            proj_units: 64,
        }
    }
}

impl EncoderConfig {
    /// Product of the conv strides.
    pub fn downsampling_factor(&self) -> usize {
        self.strides.iter().product()
    }

    /// Latent sequence length for a T-frame input: ceil applied per
    /// stride-2 layer, which equals ceil(T / factor) for the default stack.
    pub fn latent_len(&self, t: usize) -> usize {
        self.strides.iter().fold(t, |acc, &s| acc.div_ceil(s))
    }
}
