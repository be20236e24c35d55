//! Pitch tracking: difference function, cumulative mean normalized difference,
//! absolute threshold, parabolic interpolation.

use super::stft::FrameGeometry;
use super::Waveform;
use crate::error::{Result, VqpError};

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    /// Per-frame f0 in Hz, 0 where unvoiced.
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
    pub hop_ms: f64,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    /// Copy of the first `t` frames (or all of them if shorter).
    pub fn truncated(&self, t: usize) -> PitchTrack {
        let t = t.min(self.len());
        PitchTrack {
            f0_hz: self.f0_hz[..t].to_vec(),
            voiced: self.voiced[..t].to_vec(),
            hop_ms: self.hop_ms,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct YinConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub threshold: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        YinConfig { f_min: 60.0, f_max: 500.0, threshold: 0.1 }
    }
}

/// Pitch track on the default 50 ms / 12.5 ms frame grid, aligning
/// one-to-one with `mel_spectrogram` frames.
pub fn yin_pitch(wave: &Waveform, f_min: f64, f_max: f64, threshold: f64) -> Result<PitchTrack> {
    yin_pitch_with(
        wave,
        YinConfig { f_min, f_max, threshold },
        FrameGeometry::default_for(wave.sample_rate()),
    )
}

pub fn yin_pitch_with(wave: &Waveform, cfg: YinConfig, geom: FrameGeometry) -> Result<PitchTrack> {
    let sr = wave.sample_rate() as f64;
    if cfg.f_min < 40.0 {
        return Err(VqpError::BadValue(format!("f_min {} < 40 Hz", cfg.f_min)));
    }
    if cfg.f_max > sr / 4.0 {
        return Err(VqpError::BadValue(format!("f_max {} > sample_rate/4", cfg.f_max)));
    }
    if cfg.f_min >= cfg.f_max {
        return Err(VqpError::BadValue("f_min must be < f_max".into()));
    }
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(VqpError::BadValue("threshold must lie in (0, 1)".into()));
    }
    if wave.len() < geom.frame_samples {
        return Err(VqpError::InputTooShort(format!(
            "{} samples < one frame of {}",
            wave.len(),
            geom.frame_samples
        )));
    }

    let frame = geom.frame_samples;
    let w = frame / 2; // integration window; lags up to w stay inside the frame
    let tau_min = ((sr / cfg.f_max).floor() as usize).max(2);
    let tau_max = ((sr / cfg.f_min).ceil() as usize).min(w);
    let n_frames = geom.num_frames(wave.len());
    let samples = wave.samples();

    let mut f0_hz = vec![0.0; n_frames];
    let mut voiced = vec![false; n_frames];
    let mut d = vec![0.0f64; tau_max + 1];
    let mut dn = vec![1.0f64; tau_max + 1];

    for t in 0..n_frames {
        let x = &samples[t * geom.hop_samples..t * geom.hop_samples + frame];

        for tau in 1..=tau_max {
            let mut acc = 0.0;
            for j in 0..w {
                let diff = x[j] - x[j + tau];
                acc += diff * diff;
            }
            d[tau] = acc;
        }
        let mut cum = 0.0;
        for tau in 1..=tau_max {
            cum += d[tau];
            dn[tau] = if cum > 0.0 { d[tau] * tau as f64 / cum } else { 1.0 };
        }

        let mut dip = None;
        for tau in tau_min..=tau_max {
            if dn[tau] < cfg.threshold {
                let mut best = tau;
                while best + 1 <= tau_max && dn[best + 1] < dn[best] {
                    best += 1;
                }
                dip = Some(best);
                break;
            }
        }

        if let Some(tau) = dip {
            let mut tau_star = tau as f64;
            if tau > 1 && tau < tau_max {
                let (a, b, c) = (dn[tau - 1], dn[tau], dn[tau + 1]);
                let denom = a - 2.0 * b + c;
                if denom.abs() > 1e-12 {
                    let offset = 0.5 * (a - c) / denom;
                    if offset.abs() <= 1.0 {
                        tau_star += offset;
                    }
                }
            }
            f0_hz[t] = (sr / tau_star).clamp(cfg.f_min, cfg.f_max);
            voiced[t] = true;
        }
    }

    Ok(PitchTrack {
        f0_hz,
        voiced,
        hop_ms: geom.hop_samples as f64 * 1000.0 / sr,
    })
}
