//! Short-time Fourier transform with Hann windowing.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::Waveform;
use crate::error::{Result, VqpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

/// Analysis frame geometry shared by mel, MFCC, and pitch extraction so their
/// frames align one-to-one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGeometry {
    pub frame_samples: usize,
    pub hop_samples: usize,
}

impl FrameGeometry {
    /// 50 ms frames with 12.5 ms hop at the given rate.
    pub fn default_for(sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        FrameGeometry {
            frame_samples: (sr * 0.050).round() as usize,
            hop_samples: (sr * 0.0125).round() as usize,
        }
    }

    /// floor((n - frame)/hop) + 1 for n >= frame.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_samples {
            0
        } else {
            (num_samples - self.frame_samples) / self.hop_samples + 1
        }
    }

    pub fn fft_size(&self) -> usize {
        self.frame_samples.next_power_of_two()
    }
}

/// Periodic Hann window of length n.
pub(crate) fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex spectrogram, one row per frame, fft_size/2 + 1 bins per row.
pub fn stft(
    wave: &Waveform,
    frame_samples: usize,
    hop_samples: usize,
    _window: Window,
) -> Result<Array2<Complex<f64>>> {
    if hop_samples == 0 {
        return Err(VqpError::BadValue("hop_samples must be >= 1".into()));
    }
    if frame_samples == 0 {
        return Err(VqpError::BadValue("frame_samples must be >= 1".into()));
    }
    if wave.len() < frame_samples {
        return Err(VqpError::InputTooShort(format!(
            "{} samples < one frame of {frame_samples}",
            wave.len()
        )));
    }

    let geom = FrameGeometry { frame_samples, hop_samples };
    let n_frames = geom.num_frames(wave.len());
    let nfft = geom.fft_size();
    let n_bins = nfft / 2 + 1;
    let window = hann_window(frame_samples);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut out = Array2::from_elem((n_frames, n_bins), Complex::new(0.0, 0.0));
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let samples = wave.samples();

    for t in 0..n_frames {
        let start = t * hop_samples;
        for i in 0..nfft {
            let v = if i < frame_samples { samples[start + i] * window[i] } else { 0.0 };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (b, &v) in buf.iter().take(n_bins).enumerate() {
            out[[t, b]] = v;
        }
    }
    Ok(out)
}
