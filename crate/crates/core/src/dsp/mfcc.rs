//! MFCCs via orthonormal DCT-II of log-mel frames.

use ndarray::Array2;

use super::mel::MelSpectrogram;
use crate::error::{Result, VqpError};

#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    /// T x n_coeffs cepstral coefficients.
    pub frames: Array2<f64>,
    pub n_coeffs: usize,
    /// Coefficient 0 (overall level) is kept in column 0 when true.
    pub includes_c0: bool,
}

/// Orthonormal DCT-II basis: c_j = a_j * sum_m x_m cos(pi j (2m+1) / (2M)),
/// a_0 = sqrt(1/M), a_j = sqrt(2/M).
pub fn mfcc(mel: &MelSpectrogram, n_coeffs: usize) -> Result<MfccSequence> {
    let m_bins = mel.frames.ncols();
    if n_coeffs > m_bins {
        return Err(VqpError::TooManyCoefficients { requested: n_coeffs, available: m_bins });
    }
    if n_coeffs == 0 {
        return Err(VqpError::BadValue("n_coeffs must be >= 1".into()));
    }

    let mut basis = Array2::zeros((m_bins, n_coeffs));
    let mf = m_bins as f64;
    for j in 0..n_coeffs {
        let a = if j == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
        for m in 0..m_bins {
            basis[[m, j]] =
                a * (std::f64::consts::PI * j as f64 * (2.0 * m as f64 + 1.0) / (2.0 * mf)).cos();
        }
    }
    Ok(MfccSequence {
        frames: mel.frames.dot(&basis),
        n_coeffs,
        includes_c0: true,
    })
}
