//! Objective evaluation: GPE, FFE, MCD (optionally DTW-aligned), and
//! factor-correlation analysis.

use ndarray::Array2;

use crate::dsp::{MfccSequence, PitchTrack};
use crate::error::{Result, VqpError};

pub const DEFAULT_GPE_TOLERANCE: f64 = 0.20;
/// 10/ln(10) * sqrt(2), the dB scaling of the cepstral distance.
pub const MCD_CONSTANT: f64 = 4.342944819032518 * std::f64::consts::SQRT_2;

fn check_equal_frames(r: &PitchTrack, g: &PitchTrack) -> Result<()> {
    if r.len() != g.len() {
        return Err(VqpError::ShapeError(format!(
            "pitch tracks differ in length: {} vs {}",
            r.len(),
            g.len()
        )));
    }
    Ok(())
}

fn is_gross(f_ref: f64, f_gen: f64, rel_tolerance: f64) -> bool {
    (f_gen - f_ref).abs() > rel_tolerance * f_ref
}

/// Fraction of co-voiced frames whose pitch deviates by more than
/// rel_tolerance relative to the reference.
pub fn gpe(reference: &PitchTrack, generated: &PitchTrack, rel_tolerance: f64) -> Result<f64> {
    check_equal_frames(reference, generated)?;
    let mut co_voiced = 0usize;
    let mut gross = 0usize;
    for t in 0..reference.len() {
        if reference.voiced[t] && generated.voiced[t] {
            co_voiced += 1;
            if is_gross(reference.f0_hz[t], generated.f0_hz[t], rel_tolerance) {
                gross += 1;
            }
        }
    }
    if co_voiced == 0 {
        return Err(VqpError::UndefinedGpe);
    }
    Ok(gross as f64 / co_voiced as f64)
}

/// Fraction of all frames with either a voicing mismatch or a gross pitch
/// error among co-voiced frames.
pub fn ffe(reference: &PitchTrack, generated: &PitchTrack, rel_tolerance: f64) -> Result<f64> {
    check_equal_frames(reference, generated)?;
    if reference.is_empty() {
        return Err(VqpError::EmptyInput("pitch tracks have zero frames".into()));
    }
    let mut errors = 0usize;
    for t in 0..reference.len() {
        let (rv, gv) = (reference.voiced[t], generated.voiced[t]);
        if rv != gv || (rv && gv && is_gross(reference.f0_hz[t], generated.f0_hz[t], rel_tolerance))
        {
            errors += 1;
        }
    }
    Ok(errors as f64 / reference.len() as f64)
}

/// Columns holding c1..c13 for MCD, skipping c0 when present.
fn mcd_columns(seq: &MfccSequence) -> Result<std::ops::Range<usize>> {
    let start = if seq.includes_c0 { 1 } else { 0 };
    let need = start + 13;
    if seq.frames.ncols() < need {
        return Err(VqpError::TooManyCoefficients { requested: need, available: seq.frames.ncols() });
    }
    Ok(start..need)
}

fn frame_distance(a: &MfccSequence, b: &MfccSequence, i: usize, j: usize, ca: &std::ops::Range<usize>, cb: &std::ops::Range<usize>) -> f64 {
    let mut sum = 0.0;
    for (da, db) in ca.clone().zip(cb.clone()) {
        let d = a.frames[[i, da]] - b.frames[[j, db]];
        sum += d * d;
    }
    MCD_CONSTANT * sum.sqrt()
}

/// Mean mel-cepstral distortion in dB over aligned frame pairs. With
/// use_dtw the alignment minimizes total path cost (ties broken toward
/// shorter paths); otherwise frames pair index-wise, truncated to the
/// shorter sequence.
pub fn mcd(reference: &MfccSequence, generated: &MfccSequence, use_dtw: bool) -> Result<f64> {
    mcd_with_frames(reference, generated, use_dtw).map(|(v, _)| v)
}

/// [`mcd`] plus the number of aligned frame pairs the mean ran over (the
/// DTW path length, or the shorter sequence length index-wise).
pub fn mcd_with_frames(
    reference: &MfccSequence,
    generated: &MfccSequence,
    use_dtw: bool,
) -> Result<(f64, usize)> {
    if reference.frames.nrows() == 0 || generated.frames.nrows() == 0 {
        return Err(VqpError::EmptyInput("MFCC sequence has zero frames".into()));
    }
    let cr = mcd_columns(reference)?;
    let cg = mcd_columns(generated)?;
    let (tr, tg) = (reference.frames.nrows(), generated.frames.nrows());

    if !use_dtw {
        let t = tr.min(tg);
        let sum: f64 = (0..t)
            .map(|i| frame_distance(reference, generated, i, i, &cr, &cg))
            .sum();
        return Ok((sum / t as f64, t));
    }

    // DTW over steps (1,0), (0,1), (1,1); cost[i][j] = (total, path_len)
    // minimized lexicographically; the reported value is total/path_len.
    let mut cost = vec![vec![(f64::INFINITY, 0usize); tg]; tr];
    for i in 0..tr {
        for j in 0..tg {
            let d = frame_distance(reference, generated, i, j, &cr, &cg);
            let prev = if i == 0 && j == 0 {
                (0.0, 0usize)
            } else {
                let mut best = (f64::INFINITY, 0usize);
                let mut consider = |c: (f64, usize)| {
                    if c.0 < best.0 || (c.0 == best.0 && c.1 < best.1) {
                        best = c;
                    }
                };
                if i > 0 {
                    consider(cost[i - 1][j]);
                }
                if j > 0 {
                    consider(cost[i][j - 1]);
                }
                if i > 0 && j > 0 {
                    consider(cost[i - 1][j - 1]);
                }
                best
            };
            cost[i][j] = (prev.0 + d, prev.1 + 1);
        }
    }
    let (total, len) = cost[tr - 1][tg - 1];
    Ok((total / len as f64, len))
}

/// Objective comparison of one utterance pair: pitch-error rates on the
/// common frame span plus mel-cepstral distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub gpe: f64,
    pub ffe: f64,
    pub mcd_db: f64,
    /// Aligned frame pairs behind `mcd_db`.
    pub frames_compared: usize,
}

/// Run all three metrics on one pair. Pitch tracks are truncated to the
/// common length before comparison; MCD aligns per `use_dtw`.
pub fn evaluate_pair(
    reference: &PitchTrack,
    generated: &PitchTrack,
    ref_mfcc: &MfccSequence,
    gen_mfcc: &MfccSequence,
    rel_tolerance: f64,
    use_dtw: bool,
) -> Result<MetricReport> {
    let t = reference.len().min(generated.len());
    let r = reference.truncated(t);
    let g = generated.truncated(t);
    let gpe_v = gpe(&r, &g, rel_tolerance)?;
    let ffe_v = ffe(&r, &g, rel_tolerance)?;
    let (mcd_db, frames_compared) = mcd_with_frames(ref_mfcc, gen_mfcc, use_dtw)?;
    Ok(MetricReport { gpe: gpe_v, ffe: ffe_v, mcd_db, frames_compared })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorCorrelation {
    /// D x F matrix of |Pearson r| between latent dimension d and factor f.
    pub matrix: Array2<f64>,
    /// Dimensions (1-indexed) sorted by max correlation over factors,
    /// descending; ties by lower index.
    pub dimension_ranking: Vec<usize>,
}

/// |Pearson r| of every (latent dimension, factor) pair over N observations.
/// A constant latent dimension correlates with nothing and scores 0; a
/// constant factor column makes the analysis meaningless and is an error.
pub fn factor_correlation(latents: &Array2<f64>, factors: &Array2<f64>) -> Result<FactorCorrelation> {
    let n = latents.nrows();
    if n != factors.nrows() {
        return Err(VqpError::ShapeError(format!(
            "latents have {n} rows, factors {}",
            factors.nrows()
        )));
    }
    if n < 3 {
        return Err(VqpError::InsufficientData(format!(
            "need at least 3 observations, got {n}"
        )));
    }
    let (d_dim, f_dim) = (latents.ncols(), factors.ncols());

    let constant = |col: ndarray::ArrayView1<f64>| {
        let first = col[0];
        col.iter().all(|&v| v == first)
    };
    for f in 0..f_dim {
        if constant(factors.column(f)) {
            return Err(VqpError::DegenerateFactor(f));
        }
    }

    let nf = n as f64;
    let mut matrix = Array2::zeros((d_dim, f_dim));
    for d in 0..d_dim {
        let x = latents.column(d);
        if constant(x) {
            continue; // r := 0 for every factor
        }
        let mx = x.sum() / nf;
        let sx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
        for f in 0..f_dim {
            let y = factors.column(f);
            let my = y.sum() / nf;
            let sy: f64 = y.iter().map(|&v| (v - my) * (v - my)).sum();
            let sxy: f64 = x.iter().zip(y.iter()).map(|(&a, &b)| (a - mx) * (b - my)).sum();
            let r = sxy / (sx.sqrt() * sy.sqrt());
            matrix[[d, f]] = r.abs().min(1.0);
        }
    }

    let mut ranking: Vec<usize> = (0..d_dim).collect();
    let max_r: Vec<f64> = (0..d_dim)
        .map(|d| matrix.row(d).iter().cloned().fold(0.0, f64::max))
        .collect();
    ranking.sort_by(|&a, &b| {
        max_r[b].partial_cmp(&max_r[a]).unwrap().then(a.cmp(&b))
    });
    Ok(FactorCorrelation {
        matrix,
        dimension_ranking: ranking.into_iter().map(|d| d + 1).collect(),
    })
}
