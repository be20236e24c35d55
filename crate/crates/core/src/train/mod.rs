//! Deterministic training loop and the experiments built on it.
//!
//! The loop is plain gradient descent over the three-term objective
//! (masked reconstruction MSE + codebook term + commitment term). No
//! adaptive optimizer is used so that the codebook-update counter measures
//! loss-driven motion only, with no per-parameter step-size adaptation
//! mixed in.

mod corpus;
mod experiment;

pub use corpus::{
    generate_corpus, synth_utterance, Factors, SyntheticUtterance, CORPUS_SAMPLE_RATE,
    NOTE_SPAN, RAMP_SECONDS, VIBRATO_HZ,
};
pub use experiment::{
    disentangle_experiment, disentangle_from_parts, disentangle_on_features, manipulation_sweep,
    style_control_demo, DisentangleReport, FactorAttribution, StyleControlOutput,
    NO_ATTRIBUTION_THRESHOLD,
};

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{mel_spectrogram, MelSpectrogram};
use crate::error::{Result, VqpError};
use crate::net::{BatchInput, Model, NetConfig};
use crate::vq::{counter_update, CodebookCounter, CounterMode};

/// How the codebook is seeded before the first step.
///
/// `DataDependent` (the default) assigns each entry one encoder output frame,
/// cycling through the corpus so every utterance contributes. This keeps all
/// entries inside the encoder's operating region from step one; with the
/// small uniform box init most entries start far from any encoder output and
/// are never selected, which starves the codebook terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodebookInit {
    #[default]
    DataDependent,
    UniformBox,
}

impl std::str::FromStr for CodebookInit {
    type Err = VqpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" | "data_dependent" => Ok(Self::DataDependent),
            "uniform" | "uniform_box" => Ok(Self::UniformBox),
            other => Err(VqpError::BadValue(format!(
                "unknown codebook init '{other}' (expected 'data' or 'uniform')"
            ))),
        }
    }
}

/// Training hyperparameters. All fields have documented defaults; `seed`
/// fully determines the run together with the corpus and this config.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Commitment weight of the quantizer loss.
    pub beta: f64,
    pub seed: u64,
    pub counter_mode: CounterMode,
    pub codebook_init: CodebookInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 8,
            steps: 2000,
            beta: 0.25,
            seed: 0,
            counter_mode: CounterMode::MeanThenAbs,
            codebook_init: CodebookInit::DataDependent,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(VqpError::BadValue(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.steps < 1 {
            return Err(VqpError::BadValue("steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(VqpError::BadValue("batch_size must be >= 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(VqpError::BadValue(format!("beta must be finite and > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// One logged step. `total` is the exact floating-point sum of the three
/// terms as computed during the step, so the decomposition identity holds
/// bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

/// Full training trace plus the final counter state.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub counter: CodebookCounter,
}

impl TrainLog {
    /// Final reconstruction loss divided by the mean over the first
    /// `head` steps; the smoke measure of training progress.
    pub fn recon_ratio(&self, head: usize) -> f64 {
        let head = head.min(self.records.len()).max(1);
        let initial: f64 =
            self.records[..head].iter().map(|r| r.recon).sum::<f64>() / head as f64;
        self.records.last().map(|r| r.recon / initial).unwrap_or(f64::NAN)
    }
}

/// Trained model together with its training trace.
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

/// Log-mel features for every utterance, in corpus order.
pub fn corpus_mels(corpus: &[SyntheticUtterance]) -> Result<Vec<MelSpectrogram>> {
    corpus
        .iter()
        .map(|u| {
            let sr = u.wave.sample_rate() as f64;
            mel_spectrogram(&u.wave, NetConfig::default().n_mels, 0.0, sr / 2.0)
        })
        .collect()
}

/// Pad variable-length feature matrices to the batch maximum, with a mask
/// marking real frames. Padding uses `pad` (the normalized log floor), so
/// padded frames look like silence to the unmasked quantizer terms.
pub fn pad_batch(feats: &[&Array2<f64>], pad: f64) -> BatchInput {
    let b = feats.len();
    let t_max = feats.iter().map(|f| f.nrows()).max().unwrap_or(0);
    let m = feats.first().map(|f| f.ncols()).unwrap_or(0);
    let mut mels = Array3::from_elem((b, t_max, m), pad);
    let mut mask = Array2::zeros((b, t_max));
    for (i, f) in feats.iter().enumerate() {
        for t in 0..f.nrows() {
            for j in 0..m {
                mels[[i, t, j]] = f[[t, j]];
            }
            mask[[i, t]] = 1.0;
        }
    }
    BatchInput { mels, mask }
}

fn normalized_features(model: &Model, mels: &[MelSpectrogram]) -> Vec<Array2<f64>> {
    mels.iter().map(|m| model.normalize(&m.frames)).collect()
}

/// Seed every codebook entry with encoder output frames from a single
/// utterance: the one whose time-averaged encoding lies farthest from the
/// corpus centroid. Starting the whole codebook inside one peripheral
/// utterance's latent region has two effects. Within-utterance structure
/// (note identity, envelope position) is pre-solved, so it contributes
/// little further codebook motion. The corpus-level axes — the prosodic
/// factors that differ between utterances — still have to be learned, and
/// because every code starts on the same side of the corpus, the early
/// updates move the codebook coherently across those axes, which is exactly
/// the migration the update counter is built to observe. The choice is
/// unsupervised (encoder geometry only) and fully deterministic.
fn data_dependent_init(model: &mut Model, feats: &[Array2<f64>]) {
    let d = model.latent_dim();
    let mut means = Array2::<f64>::zeros((feats.len(), d));
    let mut encoded = Vec::with_capacity(feats.len());
    for (u, f) in feats.iter().enumerate() {
        let (t, m) = f.dim();
        let x3 = f
            .to_owned()
            .into_shape_with_order((1, t, m))
            .expect("contiguous");
        let z = model.encode_z_e(&x3);
        let mean = z.mean_axis(Axis(0)).expect("at least one frame");
        means.row_mut(u).assign(&mean);
        encoded.push(z);
    }
    let centroid = means.mean_axis(Axis(0)).expect("at least one utterance");
    let far = (0..feats.len())
        .max_by(|&a, &b| {
            let da: f64 = (&means.row(a) - &centroid).mapv(|v| v * v).sum();
            let db: f64 = (&means.row(b) - &centroid).mapv(|v| v * v).sum();
            da.partial_cmp(&db).expect("finite distances")
        })
        .expect("non-empty corpus");

    let z = &encoded[far];
    let k = model.book.entries.nrows();
    for row in 0..k {
        model.book.entries.row_mut(row).assign(&z.row(row % z.nrows()));
    }
}

/// Train a fresh model on the corpus. Per step: sample a batch with
/// replacement, forward, reverse pass, gradient-descent update, then feed the
/// codebook's realized movement to the counter. Aborts with a divergence
/// error naming the step if any loss term stops being finite.
pub fn train(corpus: &[SyntheticUtterance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mels = corpus_mels(corpus)?;
    train_on_features(&mels, cfg)
}

/// Same as [`train`] but over precomputed log-mel features, so repeated runs
/// (seed sweeps, determinism checks) skip feature extraction.
pub fn train_on_features(mels: &[MelSpectrogram], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(mels, cfg, &mut |_, _, _| Ok(()))
}

/// [`train_on_features`] with a per-step observer called after the optimizer
/// update and counter feed (step number, current model, counter so far); an
/// observer error aborts training. The CLI uses this for periodic
/// checkpoints — the observer never influences the trajectory.
pub fn train_with_observer(
    mels: &[MelSpectrogram],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &Model, &CodebookCounter) -> Result<()>,
) -> Result<TrainOutcome> {
    if mels.is_empty() {
        return Err(VqpError::EmptyInput("corpus has no utterances".into()));
    }
    cfg.validate()?;

    let mut model = Model::new(NetConfig::default(), cfg.seed)?;
    let feats = normalized_features(&model, mels);
    if cfg.codebook_init == CodebookInit::DataDependent {
        data_dependent_init(&mut model, &feats);
    }

    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(10_000));
    let d = model.latent_dim();
    let mut counter = CodebookCounter::new(d, cfg.counter_mode);
    let mut records = Vec::with_capacity(cfg.steps);
    let pad = model.pad_value();

    for step in 1..=cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| batch_rng.random_range(0..feats.len()))
            .collect();
        let refs: Vec<&Array2<f64>> = picks.iter().map(|&i| &feats[i]).collect();
        let batch = pad_batch(&refs, pad);

        let losses = model.forward_train(&batch, cfg.beta)?;
        for (name, v) in [
            ("recon", losses.recon),
            ("codebook", losses.codebook),
            ("commitment", losses.commitment),
        ] {
            if !v.is_finite() {
                return Err(VqpError::Divergence { step, term: name.into() });
            }
        }

        model.zero_grads();
        model.backward()?;
        let before = model.book.clone();
        model.sgd_step(cfg.lr);
        counter_update(&mut counter, &before, &model.book)?;

        records.push(StepRecord {
            step,
            recon: losses.recon,
            codebook: losses.codebook,
            commitment: losses.commitment,
            total: losses.total(),
        });
        observer(step, &model, &counter)?;
    }

    Ok(TrainOutcome { model, log: TrainLog { records, counter } })
}
