//! Shared helpers for the integration suites: independent oracles (written
//! against first principles, not against the library code) and fixture
//! builders. Each suite compares library output to these oracles.

#![allow(dead_code)] // each integration target uses a subset

use ndarray::{Array2, Array3};
use vqp_core::dsp::Waveform;
use vqp_core::net::{BatchInput, EncoderConfig, Model, NetConfig};
use vqp_core::vq::Codebook;

// ---- fixtures ----

/// A reduced architecture exercising every layer type, small enough for
/// exhaustive finite differences over all parameters.
pub fn small_net_config() -> NetConfig {
    NetConfig {
        n_mels: 10,
        encoder: EncoderConfig {
            conv_channels: 6,
            kernel_sizes: [3, 4, 3, 4],
            strides: [1, 2, 1, 2],
            n_residual_blocks: 2,
            latent_dim: 4,
            gru_units: 8,
            proj_units: 8,
        },
        codebook_size: 5,
        mel_shift: 15.0,
        mel_scale: 9.0,
    }
}

/// Deterministic 3-frame input in normalized feature space, fully unmasked.
pub fn three_frame_batch(cfg: &NetConfig) -> BatchInput {
    let m = cfg.n_mels;
    let mels = Array3::from_shape_fn((1, 3, m), |(_, t, j)| {
        ((t * 31 + j * 17 + 7) % 23) as f64 / 23.0 - 0.4
    });
    let mask = Array2::ones((1, 3));
    BatchInput { mels, mask }
}

// ---- quantizer oracle ----

/// Exhaustive nearest-neighbour scan: for each row, try every code and keep
/// the smallest squared distance, preferring the lower index on exact ties.
pub fn quantize_oracle(z_e: &Array2<f64>, book: &Codebook) -> Vec<usize> {
    let (t, d) = z_e.dim();
    let k = book.entries.nrows();
    let mut out = Vec::with_capacity(t);
    for row in 0..t {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for i in 0..k {
            let mut d2 = 0.0;
            for j in 0..d {
                let delta = z_e[[row, j]] - book.entries[[i, j]];
                d2 += delta * delta;
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        out.push(best);
    }
    out
}

// ---- pitch-metric counting oracles ----

/// GPE by direct counting: over frames voiced in both tracks, the fraction
/// where |gen - ref| > tol * ref.
pub fn gpe_oracle(
    ref_f0: &[f64],
    ref_voiced: &[bool],
    gen_f0: &[f64],
    gen_voiced: &[bool],
    tol: f64,
) -> Option<f64> {
    let n = ref_f0.len().min(gen_f0.len());
    let mut both = 0usize;
    let mut gross = 0usize;
    for t in 0..n {
        if ref_voiced[t] && gen_voiced[t] {
            both += 1;
            if (gen_f0[t] - ref_f0[t]).abs() > tol * ref_f0[t] {
                gross += 1;
            }
        }
    }
    if both == 0 {
        None
    } else {
        Some(gross as f64 / both as f64)
    }
}

/// FFE by direct counting: over all compared frames, voicing mismatches plus
/// gross errors among co-voiced frames, as a fraction of frames.
pub fn ffe_oracle(
    ref_f0: &[f64],
    ref_voiced: &[bool],
    gen_f0: &[f64],
    gen_voiced: &[bool],
    tol: f64,
) -> f64 {
    let n = ref_f0.len().min(gen_f0.len());
    let mut err = 0usize;
    for t in 0..n {
        match (ref_voiced[t], gen_voiced[t]) {
            (true, true) => {
                if (gen_f0[t] - ref_f0[t]).abs() > tol * ref_f0[t] {
                    err += 1;
                }
            }
            (true, false) | (false, true) => err += 1,
            (false, false) => {}
        }
    }
    err as f64 / n as f64
}

// ---- DTW oracle ----

/// Brute-force DTW over all monotone alignment paths from (0,0) to
/// (n-1, m-1) with steps (1,0), (0,1), (1,1): minimizes total cost
/// lexicographically by (sum, path length), then divides by path length —
/// feasible for tiny inputs only.
pub fn dtw_oracle(cost: &Array2<f64>) -> f64 {
    let (n, m) = cost.dim();
    fn walk(cost: &Array2<f64>, i: usize, j: usize) -> (f64, usize) {
        let here = cost[[i, j]];
        if i == 0 && j == 0 {
            return (here, 1);
        }
        let mut best = (f64::INFINITY, usize::MAX);
        if i > 0 {
            let (s, l) = walk(cost, i - 1, j);
            best = min_pair(best, (s, l));
        }
        if j > 0 {
            let (s, l) = walk(cost, i, j - 1);
            best = min_pair(best, (s, l));
        }
        if i > 0 && j > 0 {
            let (s, l) = walk(cost, i - 1, j - 1);
            best = min_pair(best, (s, l));
        }
        (best.0 + here, best.1 + 1)
    }
    fn min_pair(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
        if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    }
    let (sum, len) = walk(cost, n - 1, m - 1);
    sum / len as f64
}

// ---- waveform builders ----

pub fn sine_wave(freq: f64, duration_s: f64, sample_rate: u32) -> Waveform {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin()
        })
        .collect();
    Waveform::new(samples, sample_rate).expect("valid sine")
}

/// Band-limited-enough sawtooth via 20 harmonics, scaled into [-1, 1].
pub fn sawtooth_wave(freq: f64, duration_s: f64, sample_rate: u32) -> Waveform {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let mut samples = vec![0.0; n];
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / sample_rate as f64;
        let mut v = 0.0;
        for h in 1..=20 {
            v += (2.0 * std::f64::consts::PI * freq * h as f64 * t).sin() / h as f64;
        }
        *s = 0.5 * v;
    }
    Waveform::new(samples, sample_rate).expect("valid sawtooth")
}

pub fn silence(duration_s: f64, sample_rate: u32) -> Waveform {
    let n = (duration_s * sample_rate as f64).round() as usize;
    Waveform::new(vec![0.0; n], sample_rate).expect("valid silence")
}

// ---- finite-difference gradient harness ----

pub struct FdReport {
    /// Worst relative error over every checked parameter, with the group and
    /// flat index where it occurred.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub n_checked: usize,
}

/// Central-difference check of every analytic gradient (network parameters
/// and codebook entries) against the frozen-quantization surrogate loss.
/// The surrogate pins the quantizer's discrete state, so its exact gradient
/// equals what `backward` computes; see `Model::loss_frozen_quant`.
pub fn fd_check_all_params(model: &mut Model, batch: &BatchInput, beta: f64) -> FdReport {
    let losses = model.forward_train(batch, beta).expect("forward");
    let frozen = model.frozen_quant().expect("frozen state");

    // the surrogate agrees with the recorded loss at the freeze point
    let l0 = model.loss_frozen_quant(batch, &frozen, beta).expect("surrogate");
    assert!(
        (l0.total() - losses.total()).abs() <= 1e-12 * losses.total().abs().max(1.0),
        "surrogate loss {} diverges from recorded loss {}",
        l0.total(),
        losses.total()
    );

    model.zero_grads();
    model.backward().expect("backward");

    let mut names: Vec<String> = Vec::new();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.visit_grads(&mut |name, g| {
        names.push(name.to_string());
        analytic.push(g.to_vec());
    });

    let h = 1e-5;
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        n_checked: 0,
    };

    for (gi, name) in names.iter().enumerate() {
        let n = analytic[gi].len();
        for idx in 0..n {
            let fd = central_diff(model, batch, &frozen, beta, name, idx, h);
            record(&mut report, &format!("{name}[{idx}]"), analytic[gi][idx], fd);
        }
    }

    // codebook entries: perturb directly
    let (k, d) = model.book.entries.dim();
    let book_grad = model.book_grad.clone();
    for i in 0..k {
        for j in 0..d {
            let orig = model.book.entries[[i, j]];
            model.book.entries[[i, j]] = orig + h;
            let lp = model.loss_frozen_quant(batch, &frozen, beta).unwrap().total();
            model.book.entries[[i, j]] = orig - h;
            let lm = model.loss_frozen_quant(batch, &frozen, beta).unwrap().total();
            model.book.entries[[i, j]] = orig;
            let fd = (lp - lm) / (2.0 * h);
            record(&mut report, &format!("codebook[{i},{j}]"), book_grad[[i, j]], fd);
        }
    }

    report
}

fn central_diff(
    model: &mut Model,
    batch: &BatchInput,
    frozen: &vqp_core::net::FrozenQuant,
    beta: f64,
    name: &str,
    idx: usize,
    h: f64,
) -> f64 {
    fn shift(model: &mut Model, name: &str, idx: usize, delta: f64) {
        model.visit_params_mut(&mut |n, data| {
            if n == name {
                data[idx] += delta;
            }
        });
    }
    shift(model, name, idx, h);
    let lp = model.loss_frozen_quant(batch, frozen, beta).unwrap().total();
    shift(model, name, idx, -2.0 * h);
    let lm = model.loss_frozen_quant(batch, frozen, beta).unwrap().total();
    shift(model, name, idx, h);
    (lp - lm) / (2.0 * h)
}

fn record(report: &mut FdReport, name: &str, analytic: f64, fd: f64) {
    report.n_checked += 1;
    let denom = analytic.abs().max(fd.abs());
    if denom < 1e-8 {
        return; // both effectively zero
    }
    let rel = (analytic - fd).abs() / denom;
    if rel > report.max_rel_err {
        report.max_rel_err = rel;
        report.worst_param = name.to_string();
    }
}
