//! Log-mel spectrogram with an HTK-scale triangular filterbank.

use ndarray::Array2;

use super::stft::{stft, FrameGeometry, Window};
use super::Waveform;
use crate::error::{Result, VqpError};

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// T x n_mels log-energies.
    pub frames: Array2<f64>,
    pub n_mels: usize,
    pub frame_length_ms: f64,
    pub hop_ms: f64,
    pub sample_rate: u32,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// n_mels x n_bins triangular filters on FFT bin centers, each filter scaled
/// by 2/(hi - lo) so passband area is roughly constant across the bank.
pub fn mel_filterbank(
    sample_rate: u32,
    fft_size: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<Array2<f64>> {
    if !(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate as f64 / 2.0) {
        return Err(VqpError::BadMelRange(format!(
            "need 0 <= fmin < fmax <= {}; got [{fmin}, {fmax}]",
            sample_rate as f64 / 2.0
        )));
    }
    if n_mels == 0 {
        return Err(VqpError::BadMelRange("n_mels must be >= 1".into()));
    }
    let n_bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, ctr, hi) = (points[m], points[m + 1], points[m + 2]);
        let norm = 2.0 / (hi - lo);
        for b in 0..n_bins {
            let f = b as f64 * sample_rate as f64 / fft_size as f64;
            let up = (f - lo) / (ctr - lo);
            let down = (hi - f) / (hi - ctr);
            let w = up.min(down).max(0.0);
            fb[[m, b]] = w * norm;
        }
    }
    Ok(fb)
}

/// Log-mel spectrogram with the default 50 ms / 12.5 ms frame geometry.
pub fn mel_spectrogram(
    wave: &Waveform,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelSpectrogram> {
    mel_spectrogram_with(wave, n_mels, fmin, fmax, FrameGeometry::default_for(wave.sample_rate()))
}

pub fn mel_spectrogram_with(
    wave: &Waveform,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    geom: FrameGeometry,
) -> Result<MelSpectrogram> {
    let fb = mel_filterbank(wave.sample_rate(), geom.fft_size(), n_mels, fmin, fmax)?;
    let spec = stft(wave, geom.frame_samples, geom.hop_samples, Window::Hann)?;
    let power = spec.mapv(|c| c.norm_sqr());
    let mut frames = power.dot(&fb.t());
    frames.mapv_inplace(|v| v.max(LOG_FLOOR).ln());
    let sr = wave.sample_rate();
    Ok(MelSpectrogram {
        frames,
        n_mels,
        frame_length_ms: geom.frame_samples as f64 * 1000.0 / sr as f64,
        hop_ms: geom.hop_samples as f64 * 1000.0 / sr as f64,
        sample_rate: sr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_produces_80_mel_bins() {
        let samples: Vec<f64> = (0..16000).map(|i| 0.3 * (0.01 * i as f64).sin()).collect();
        let wave = Waveform::new(samples, 16000).unwrap();
        let mel = mel_spectrogram(&wave, 80, 0.0, 8000.0).unwrap();
        assert_eq!(mel.frames.ncols(), 80);
        assert_eq!(mel.frames.nrows(), 77);
        assert!(mel.frames.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn silence_maps_to_log_floor_everywhere() {
        let wave = Waveform::new(vec![0.0; 8000], 16000).unwrap();
        let mel = mel_spectrogram(&wave, 80, 0.0, 8000.0).unwrap();
        let expect = LOG_FLOOR.ln();
        assert!(mel.frames.iter().all(|&v| v == expect));
    }

    #[test]
    fn rejects_inverted_band() {
        let wave = Waveform::new(vec![0.1; 8000], 16000).unwrap();
        assert!(matches!(
            mel_spectrogram(&wave, 80, 4000.0, 100.0),
            Err(VqpError::BadMelRange(_))
        ));
    }

    #[test]
    fn determinism_bitwise() {
        let samples: Vec<f64> = (0..16000).map(|i| 0.3 * (0.007 * i as f64).sin()).collect();
        let wave = Waveform::new(samples, 16000).unwrap();
        let a = mel_spectrogram(&wave, 80, 0.0, 8000.0).unwrap();
        let b = mel_spectrogram(&wave, 80, 0.0, 8000.0).unwrap();
        assert_eq!(a.frames, b.frames);
    }
}
