//! Signal-processing front end: waveform I/O, STFT, mel features, MFCC, pitch.

mod mel;
mod mfcc;
mod stft;
mod wav;
mod yin;

pub use mel::{mel_filterbank, mel_spectrogram, mel_spectrogram_with, hz_to_mel, mel_to_hz, MelSpectrogram, LOG_FLOOR};
pub use mfcc::{mfcc, MfccSequence};
pub use stft::{stft, FrameGeometry, Window};
pub use yin::{yin_pitch, yin_pitch_with, PitchTrack, YinConfig};

use crate::error::{Result, VqpError};

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(VqpError::AudioFormat("sample rate must be positive".into()));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0 + 1e-6) {
            return Err(VqpError::AudioFormat(format!(
                "sample magnitude {s} outside [-1, 1]"
            )));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn from_wav_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        wav::read_wav(path.as_ref())
    }

    pub fn to_wav_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        wav::write_wav(self, path.as_ref())
    }
}
