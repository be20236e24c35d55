//! Full model: encoder -> VQ -> (GRU summary, decoder) with recorded-forward
//! backward passes and the straight-through / stop-gradient routing.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv1d, Gru, Linear, Relu, ResidualBlock, Upsample2x};
use super::EncoderConfig;
use crate::dsp::MelSpectrogram;
use crate::error::{Result, VqpError};
use crate::vq::{quantize, straight_through, Codebook};

/// Model-level configuration: input width, architecture, codebook size, and
/// the affine feature normalization applied to log-mel input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n_mels: usize,
    pub encoder: EncoderConfig,
    pub codebook_size: usize,
    /// Features enter the network as (log_mel + mel_shift) / mel_scale.
    pub mel_shift: f64,
    pub mel_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            n_mels: 80,
            encoder: EncoderConfig::default(),
            codebook_size: 256,
            mel_shift: 15.0,
            mel_scale: 9.0,
        }
    }
}

/// Quantized sequence plus its utterance-level summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyLatent {
    /// T' x D.
    pub z_q_sequence: Array2<f64>,
    /// proj_units.
    pub embedding: Array1<f64>,
    pub indices: Vec<usize>,
}

/// Normalized, padded training batch.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// B x T x M in normalized feature space.
    pub mels: Array3<f64>,
    /// B x T, 1.0 on real frames, 0.0 on padding.
    pub mask: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.recon + self.codebook + self.commitment
    }

    pub fn is_finite(&self) -> bool {
        self.recon.is_finite() && self.codebook.is_finite() && self.commitment.is_finite()
    }
}

/// Quantization state frozen at a recorded forward pass, for validating the
/// straight-through and stop-gradient routes with finite differences: the
/// surrogate loss it induces is differentiable, and at the freeze point its
/// value and exact gradient coincide with what forward/backward compute.
#[derive(Debug, Clone)]
pub struct FrozenQuant {
    pub indices: Vec<usize>,
    /// z_q - z_e at the freeze point; rows (B*T') x D.
    pub offset: Array2<f64>,
    /// Selected codes at the freeze point (commitment target, held constant).
    pub commit_target: Array2<f64>,
    /// Encoder outputs at the freeze point (codebook target, held constant).
    pub codebook_target: Array2<f64>,
}

struct FwdCache {
    /// recon - target over the cropped region, B x T x M.
    diff: Array3<f64>,
    mask: Array2<f64>,
    mask_denom: f64,
    z_e: Array2<f64>,
    indices: Vec<usize>,
    beta: f64,
    b: usize,
    t_latent: usize,
    t_dec: usize,
    t_target: usize,
}

pub struct Model {
    pub cfg: NetConfig,
    pub rng_seed: u64,
    convs: Vec<Conv1d>,
    conv_relus: Vec<Relu>,
    res_blocks: Vec<ResidualBlock>,
    proj: Linear,
    gru: Gru,
    emb: Linear,
    pub book: Codebook,
    pub book_grad: Array2<f64>,
    din: Linear,
    dcond: Linear,
    drelu_in: Relu,
    dups: Vec<Upsample2x>,
    dconvs: Vec<Conv1d>,
    drelus: Vec<Relu>,
    out: Linear,
    fwd: Option<FwdCache>,
}

impl Model {
    /// Build with seeded uniform fan-in initialization (biases zero) and a
    /// codebook drawn uniformly from [-1/K, 1/K].
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        let e = &cfg.encoder;
        if e.kernel_sizes.len() != e.strides.len() {
            return Err(VqpError::ShapeError("kernel/stride lists differ".into()));
        }
        if e.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(VqpError::BadValue("conv strides must be 1 or 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = e.conv_channels;

        let mut convs = Vec::new();
        let mut conv_relus = Vec::new();
        let mut c_in = cfg.n_mels;
        for (i, (&k, &st)) in e.kernel_sizes.iter().zip(e.strides.iter()).enumerate() {
            let _ = i;
            convs.push(Conv1d::new(c_in, ch, k, st, &mut rng));
            conv_relus.push(Relu::new());
            c_in = ch;
        }
        let res_blocks = (0..e.n_residual_blocks)
            .map(|_| ResidualBlock::new(ch, &mut rng))
            .collect();
        let proj = Linear::new(ch, e.latent_dim, &mut rng);
        let gru = Gru::new(e.latent_dim, e.gru_units, &mut rng);
        let emb = Linear::new(e.gru_units, e.proj_units, &mut rng);

        let k = cfg.codebook_size;
        let bound = 1.0 / k as f64;
        let book = Codebook::new(Array2::from_shape_fn((k, e.latent_dim), |_| {
            rng.random_range(-bound..bound)
        }))?;
        let book_grad = Array2::zeros((k, e.latent_dim));

        let din = Linear::new(e.latent_dim, ch, &mut rng);
        let dcond = Linear::new(e.proj_units, ch, &mut rng);
        let n_up = e.strides.iter().filter(|&&s| s == 2).count();
        let dups = (0..n_up).map(|_| Upsample2x::new()).collect();
        let dconvs = (0..n_up).map(|_| Conv1d::new(ch, ch, 3, 1, &mut rng)).collect();
        let drelus = (0..n_up).map(|_| Relu::new()).collect();
        let out = Linear::new(ch, cfg.n_mels, &mut rng);

        Ok(Model {
            cfg,
            rng_seed: seed,
            convs,
            conv_relus,
            res_blocks,
            proj,
            gru,
            emb,
            book,
            book_grad,
            din,
            dcond,
            drelu_in: Relu::new(),
            dups,
            dconvs,
            drelus,
            out,
            fwd: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.encoder.latent_dim
    }

    pub fn normalize(&self, log_mel: &Array2<f64>) -> Array2<f64> {
        (log_mel + self.cfg.mel_shift) / self.cfg.mel_scale
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        x * self.cfg.mel_scale - self.cfg.mel_shift
    }

    /// Normalized padding value corresponding to silence (the log floor).
    pub fn pad_value(&self) -> f64 {
        (crate::dsp::LOG_FLOOR.ln() + self.cfg.mel_shift) / self.cfg.mel_scale
    }

    // ---- inference (no recorded computation) ----

    pub(crate) fn encode_z_e(&self, x: &Array3<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (conv, relu) in self.convs.iter().zip(self.conv_relus.iter()) {
            h = relu.apply(&conv.apply(&h));
        }
        for block in &self.res_blocks {
            h = block.apply(&h);
        }
        let (b, t, c) = h.dim();
        let flat = h.into_shape_with_order((b * t, c)).expect("contiguous");
        self.proj.apply(&flat)
    }

    fn decode_inner(&self, z_q: &Array2<f64>, embedding: &Array2<f64>, b: usize, t_latent: usize) -> Array3<f64> {
        let ch = self.cfg.encoder.conv_channels;
        let d_in = self.din.apply(z_q);
        let d_cond = self.dcond.apply(embedding);
        let mut h = d_in
            .into_shape_with_order((b, t_latent, ch))
            .expect("decoder reshape");
        for bi in 0..b {
            for t in 0..t_latent {
                for c in 0..ch {
                    h[[bi, t, c]] += d_cond[[bi, c]];
                }
            }
        }
        h = self.drelu_in.apply(&h);
        for i in 0..self.dups.len() {
            h = self.drelus[i].apply(&self.dconvs[i].apply(&self.dups[i].apply(&h)));
        }
        let (b2, t2, c2) = h.dim();
        let flat = h.into_shape_with_order((b2 * t2, c2)).expect("contiguous");
        let y = self.out.apply(&flat);
        y.into_shape_with_order((b2, t2, self.cfg.n_mels)).expect("output reshape")
    }

    fn crop_or_pad(y: &Array3<f64>, target: usize) -> Array3<f64> {
        let (b, t, m) = y.dim();
        if t == target {
            return y.clone();
        }
        let mut out = Array3::zeros((b, target, m));
        let copy = t.min(target);
        out.slice_mut(s![.., ..copy, ..]).assign(&y.slice(s![.., ..copy, ..]));
        out
    }

    /// Inference-only encoding of one utterance; thread-safe on frozen
    /// parameters (records nothing).
    /// Encoder output before quantization, one row per latent frame. Useful
    /// for analyses that need the continuous representation (the quantized
    /// path goes through [`Model::encode`]).
    pub fn encode_unquantized(&self, mel: &MelSpectrogram) -> Result<Array2<f64>> {
        if mel.frames.ncols() != self.cfg.n_mels {
            return Err(VqpError::ShapeError(format!(
                "mel has {} bins, model expects {}",
                mel.frames.ncols(),
                self.cfg.n_mels
            )));
        }
        let x = self.normalize(&mel.frames);
        let t = x.nrows();
        let x3 = x.into_shape_with_order((1, t, self.cfg.n_mels)).expect("contiguous");
        Ok(self.encode_z_e(&x3))
    }

    pub fn encode(&self, mel: &MelSpectrogram) -> Result<ProsodyLatent> {
        if mel.frames.ncols() != self.cfg.n_mels {
            return Err(VqpError::ShapeError(format!(
                "mel has {} bins, model expects {}",
                mel.frames.ncols(),
                self.cfg.n_mels
            )));
        }
        let x = self.normalize(&mel.frames);
        let t = x.nrows();
        let x3 = x.into_shape_with_order((1, t, self.cfg.n_mels)).expect("contiguous");
        let z_e = self.encode_z_e(&x3);
        let q = quantize(&z_e, &self.book)?;
        let embedding = self.embed_sequence(&q.z_q);
        Ok(ProsodyLatent { z_q_sequence: q.z_q, embedding, indices: q.indices })
    }

    /// GRU summary + projection for a (possibly manipulated) latent sequence.
    pub fn embed_sequence(&self, z_q: &Array2<f64>) -> Array1<f64> {
        let (t, d) = z_q.dim();
        let z3 = z_q
            .to_owned()
            .into_shape_with_order((1, t, d))
            .expect("contiguous");
        let h_last = self.gru.apply(&z3);
        let e = self.emb.apply(&h_last);
        e.row(0).to_owned()
    }

    /// Reconstruct target_frames frames (normalized feature space) from a
    /// latent; target must cover the latent sequence.
    pub fn decode(&self, latent: &ProsodyLatent, target_frames: usize) -> Result<Array2<f64>> {
        let t_latent = latent.z_q_sequence.nrows();
        if target_frames < t_latent {
            return Err(VqpError::BadValue(format!(
                "target_frames {target_frames} < latent length {t_latent}"
            )));
        }
        let emb2 = latent
            .embedding
            .to_owned()
            .into_shape_with_order((1, self.cfg.encoder.proj_units))
            .expect("contiguous");
        let y = self.decode_inner(&latent.z_q_sequence, &emb2, 1, t_latent);
        let cropped = Self::crop_or_pad(&y, target_frames);
        Ok(cropped.index_axis(Axis(0), 0).to_owned())
    }

    // ---- recorded forward / backward ----

    /// Training forward: records every layer's cache and returns the three
    /// loss terms. Reconstruction is masked mean squared error; the VQ terms
    /// average over all (batch x latent-time) rows, padding included.
    pub fn forward_train(&mut self, batch: &BatchInput, beta: f64) -> Result<LossBreakdown> {
        if beta <= 0.0 {
            return Err(VqpError::BadValue("beta must be > 0".into()));
        }
        let (b, t_target, m) = batch.mels.dim();
        if m != self.cfg.n_mels {
            return Err(VqpError::ShapeError(format!(
                "batch has {m} mel bins, model expects {}",
                self.cfg.n_mels
            )));
        }
        if batch.mask.dim() != (b, t_target) {
            return Err(VqpError::ShapeError("mask shape mismatch".into()));
        }

        let mut h = batch.mels.clone();
        for (conv, relu) in self.convs.iter_mut().zip(self.conv_relus.iter_mut()) {
            h = relu.forward(&conv.forward(&h));
        }
        for block in self.res_blocks.iter_mut() {
            h = block.forward(&h);
        }
        let (_, t_latent, ch) = h.dim();
        let flat = h.into_shape_with_order((b * t_latent, ch)).expect("contiguous");
        let z_e = self.proj.forward(&flat);

        let q = quantize(&z_e, &self.book)?;
        let z_q3 = q
            .z_q
            .clone()
            .into_shape_with_order((b, t_latent, self.latent_dim()))
            .expect("contiguous");

        let h_last = self.gru.forward(&z_q3);
        let embv = self.emb.forward(&h_last);

        // decoder (recorded): din on flattened z_q, conditioning broadcast over time
        let ch_dec = self.cfg.encoder.conv_channels;
        let d_in = self.din.forward(&q.z_q);
        let d_cond = self.dcond.forward(&embv);
        let mut dh = d_in
            .into_shape_with_order((b, t_latent, ch_dec))
            .expect("decoder reshape");
        for bi in 0..b {
            for t in 0..t_latent {
                for c in 0..ch_dec {
                    dh[[bi, t, c]] += d_cond[[bi, c]];
                }
            }
        }
        let mut g = self.drelu_in.forward(&dh);
        for i in 0..self.dups.len() {
            g = self.drelus[i].forward(&self.dconvs[i].forward(&self.dups[i].forward(&g)));
        }
        let (_, t_dec, _) = g.dim();
        let flat_dec = g.into_shape_with_order((b * t_dec, ch_dec)).expect("contiguous");
        let y = self.out.forward(&flat_dec);
        let y3 = y
            .into_shape_with_order((b, t_dec, self.cfg.n_mels))
            .expect("output reshape");
        let recon = Self::crop_or_pad(&y3, t_target);

        let diff = &recon - &batch.mels;
        let mask_sum: f64 = batch.mask.sum();
        let mask_denom = mask_sum * self.cfg.n_mels as f64;
        if mask_denom <= 0.0 {
            return Err(VqpError::EmptyInput("batch mask selects no frames".into()));
        }
        let mut recon_loss = 0.0;
        for bi in 0..b {
            for t in 0..t_target {
                if batch.mask[[bi, t]] > 0.0 {
                    for mm in 0..m {
                        recon_loss += diff[[bi, t, mm]] * diff[[bi, t, mm]];
                    }
                }
            }
        }
        recon_loss /= mask_denom;

        let rows = (b * t_latent) as f64;
        let mut vq_mean = 0.0;
        for (row, &idx) in q.indices.iter().enumerate() {
            for d in 0..self.latent_dim() {
                let delta = z_e[[row, d]] - self.book.entries[[idx, d]];
                vq_mean += delta * delta;
            }
        }
        vq_mean /= rows;

        self.fwd = Some(FwdCache {
            diff,
            mask: batch.mask.clone(),
            mask_denom,
            z_e,
            indices: q.indices,
            beta,
            b,
            t_latent,
            t_dec,
            t_target,
        });

        Ok(LossBreakdown {
            recon: recon_loss,
            codebook: vq_mean,
            commitment: beta * vq_mean,
        })
    }

    /// Reverse pass for recon + codebook + commitment. Returns the gradient
    /// with respect to the (normalized) input batch.
    pub fn backward(&mut self) -> Result<Array3<f64>> {
        self.backward_weighted(1.0, 1.0, 1.0)
    }

    /// Reverse pass with per-term adjoint weights, so tests can isolate the
    /// routing of each loss term.
    pub fn backward_weighted(
        &mut self,
        w_recon: f64,
        w_codebook: f64,
        w_commitment: f64,
    ) -> Result<Array3<f64>> {
        let FwdCache {
            diff,
            mask,
            mask_denom,
            z_e,
            indices,
            beta,
            b,
            t_latent,
            t_dec,
            t_target,
        } = self.fwd.take().ok_or(VqpError::NoRecordedComputation)?;
        let m = self.cfg.n_mels;
        let d_lat = self.latent_dim();
        let ch = self.cfg.encoder.conv_channels;

        // d recon / d recon_output, masked; expand back to the decoder's
        // pre-crop length (padded rows received no loss)
        let mut g_recon = Array3::zeros((b, t_dec, m));
        let copy = t_dec.min(t_target);
        for bi in 0..b {
            for t in 0..copy {
                let w = mask[[bi, t]];
                if w > 0.0 {
                    for mm in 0..m {
                        g_recon[[bi, t, mm]] =
                            w_recon * 2.0 * w * diff[[bi, t, mm]] / mask_denom;
                    }
                }
            }
        }

        let g_flat = g_recon
            .into_shape_with_order((b * t_dec, m))
            .expect("contiguous");
        let mut g = self
            .out
            .backward(&g_flat)?
            .into_shape_with_order((b, t_dec, ch))
            .expect("contiguous");
        for i in (0..self.dups.len()).rev() {
            g = self.dups[i].backward(&self.dconvs[i].backward(&self.drelus[i].backward(&g)?)?)?;
        }
        let g_d0 = self.drelu_in.backward(&g)?;

        // split the decoder input gradient into the z_q path and the
        // broadcast conditioning path
        let mut g_cond = Array2::zeros((b, ch));
        for bi in 0..b {
            for t in 0..t_latent {
                for c in 0..ch {
                    g_cond[[bi, c]] += g_d0[[bi, t, c]];
                }
            }
        }
        let g_d0_flat = g_d0
            .into_shape_with_order((b * t_latent, ch))
            .expect("contiguous");
        let g_zq_dec = self.din.backward(&g_d0_flat)?;
        let g_emb = self.dcond.backward(&g_cond)?;

        let g_hlast = self.emb.backward(&g_emb)?;
        let g_zq_gru = self.gru.backward(&g_hlast)?;
        let g_zq_gru_flat = g_zq_gru
            .into_shape_with_order((b * t_latent, d_lat))
            .expect("contiguous");
        let g_zq = &g_zq_dec + &g_zq_gru_flat;

        // straight-through: the z_q adjoint crosses the quantizer unchanged;
        // commitment adds 2*beta*(z_e - e)/rows to z_e only
        let rows = (b * t_latent) as f64;
        let mut g_ze = straight_through(&g_zq);
        for (row, &idx) in indices.iter().enumerate() {
            for d in 0..d_lat {
                let delta = z_e[[row, d]] - self.book.entries[[idx, d]];
                g_ze[[row, d]] += w_commitment * beta * 2.0 * delta / rows;
            }
        }

        // codebook loss routes to the entries only
        for (row, &idx) in indices.iter().enumerate() {
            for d in 0..d_lat {
                let delta = self.book.entries[[idx, d]] - z_e[[row, d]];
                self.book_grad[[idx, d]] += w_codebook * 2.0 * delta / rows;
            }
        }

        let g_res = self
            .proj
            .backward(&g_ze)?
            .into_shape_with_order((b, t_latent, ch))
            .expect("contiguous");
        let mut g = g_res;
        for block in self.res_blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        for (conv, relu) in self.convs.iter_mut().zip(self.conv_relus.iter_mut()).rev() {
            g = conv.backward(&relu.backward(&g)?)?;
        }
        Ok(g)
    }

    /// Snapshot of the quantization state from the most recent recorded
    /// forward, for finite-difference validation of the gradient routing.
    pub fn frozen_quant(&self) -> Result<FrozenQuant> {
        let cache = self.fwd.as_ref().ok_or(VqpError::NoRecordedComputation)?;
        let rows = cache.indices.len();
        let d = self.latent_dim();
        let mut offset = Array2::zeros((rows, d));
        let mut commit_target = Array2::zeros((rows, d));
        for (row, &idx) in cache.indices.iter().enumerate() {
            for dd in 0..d {
                let e = self.book.entries[[idx, dd]];
                offset[[row, dd]] = e - cache.z_e[[row, dd]];
                commit_target[[row, dd]] = e;
            }
        }
        Ok(FrozenQuant {
            indices: cache.indices.clone(),
            offset,
            commit_target,
            codebook_target: cache.z_e.clone(),
        })
    }

    /// Differentiable surrogate of the training loss with the quantization
    /// state frozen: z_q := z_e + offset (so the straight-through path is an
    /// ordinary addition of a constant), the commitment target and the
    /// codebook target held constant. At the freeze point its value equals
    /// forward_train's, and its exact derivatives equal what backward
    /// computes, so central differences of this function validate the
    /// analytic gradients.
    pub fn loss_frozen_quant(
        &self,
        batch: &BatchInput,
        frozen: &FrozenQuant,
        beta: f64,
    ) -> Result<LossBreakdown> {
        let (b, t_target, m) = batch.mels.dim();
        let x = batch.mels.clone();
        let z_e = self.encode_z_e(&x);
        if z_e.nrows() != frozen.offset.nrows() {
            return Err(VqpError::ShapeError("frozen state shape mismatch".into()));
        }
        let z_q = &z_e + &frozen.offset;
        let t_latent = z_e.nrows() / b;
        let d = self.latent_dim();

        let z_q3 = z_q
            .clone()
            .into_shape_with_order((b, t_latent, d))
            .expect("contiguous");
        let h_last = self.gru.apply(&z_q3);
        let embv = self.emb.apply(&h_last);
        let y = self.decode_inner(&z_q, &embv, b, t_latent);
        let recon = Self::crop_or_pad(&y, t_target);

        let mask_denom = batch.mask.sum() * m as f64;
        let mut recon_loss = 0.0;
        for bi in 0..b {
            for t in 0..t_target {
                if batch.mask[[bi, t]] > 0.0 {
                    for mm in 0..m {
                        let delta = recon[[bi, t, mm]] - batch.mels[[bi, t, mm]];
                        recon_loss += delta * delta;
                    }
                }
            }
        }
        recon_loss /= mask_denom;

        let rows = z_e.nrows() as f64;
        let mut codebook_loss = 0.0;
        let mut commitment = 0.0;
        for (row, &idx) in frozen.indices.iter().enumerate() {
            for dd in 0..d {
                let dc = frozen.codebook_target[[row, dd]] - self.book.entries[[idx, dd]];
                codebook_loss += dc * dc;
                let dm = z_e[[row, dd]] - frozen.commit_target[[row, dd]];
                commitment += dm * dm;
            }
        }
        Ok(LossBreakdown {
            recon: recon_loss,
            codebook: codebook_loss / rows,
            commitment: beta * commitment / rows,
        })
    }

    // ---- parameter access ----

    pub fn zero_grads(&mut self) {
        self.visit_grads_mut(&mut |_, g| g.fill(0.0));
        self.book_grad.fill(0.0);
    }

    /// Plain gradient descent over every parameter, codebook included.
    pub fn sgd_step(&mut self, lr: f64) {
        for (_, store) in self.layer_params_mut() {
            store.sgd(lr);
        }
        let scaled = &self.book_grad * lr;
        self.book.entries -= &scaled;
    }

    fn layer_params(&self) -> Vec<(String, &dyn ParamStore)> {
        let mut v: Vec<(String, &dyn ParamStore)> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            v.push((format!("enc.conv{}", i + 1), c));
        }
        for (i, r) in self.res_blocks.iter().enumerate() {
            v.push((format!("enc.res{}", i + 1), &r.conv));
        }
        v.push(("enc.proj".into(), &self.proj));
        v.push(("gru".into(), &self.gru));
        v.push(("emb".into(), &self.emb));
        v.push(("dec.din".into(), &self.din));
        v.push(("dec.cond".into(), &self.dcond));
        for (i, c) in self.dconvs.iter().enumerate() {
            v.push((format!("dec.conv{}", i + 1), c));
        }
        v.push(("dec.out".into(), &self.out));
        v
    }

    /// Visit (name, data, shape) of every network parameter, in a stable
    /// order. The codebook is separate state and not included here.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        for (prefix, store) in self.layer_params() {
            store.visit(&prefix, f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (prefix, store) in self.layer_params_mut() {
            store.visit_mut(&prefix, f);
        }
    }

    pub fn visit_grads(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (prefix, store) in self.layer_params() {
            store.visit_grads(&prefix, f);
        }
    }

    fn visit_grads_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (prefix, store) in self.layer_params_mut() {
            store.visit_grads_mut(&prefix, f);
        }
    }

    fn layer_params_mut(&mut self) -> Vec<(String, &mut dyn ParamStore)> {
        let mut v: Vec<(String, &mut dyn ParamStore)> = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            v.push((format!("enc.conv{}", i + 1), c));
        }
        for (i, r) in self.res_blocks.iter_mut().enumerate() {
            v.push((format!("enc.res{}", i + 1), &mut r.conv));
        }
        v.push(("enc.proj".into(), &mut self.proj));
        v.push(("gru".into(), &mut self.gru));
        v.push(("emb".into(), &mut self.emb));
        v.push(("dec.din".into(), &mut self.din));
        v.push(("dec.cond".into(), &mut self.dcond));
        for (i, c) in self.dconvs.iter_mut().enumerate() {
            v.push((format!("dec.conv{}", i + 1), c));
        }
        v.push(("dec.out".into(), &mut self.out));
        v
    }

    /// True when every parameter and codebook entry is finite.
    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_, data, _| {
            if !data.iter().all(|v| v.is_finite()) {
                ok = false;
            }
        });
        ok && self.book.entries.iter().all(|v| v.is_finite())
    }
}

/// Uniform named access to a layer's weight/bias arrays and their gradients.
trait ParamStore {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64], &[usize]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));
    fn visit_grads(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_grads_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));
    fn sgd(&mut self, lr: f64);
}

impl ParamStore for Conv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        f(&format!("{prefix}.w"), self.w.as_slice().unwrap(), &self.w.shape().to_vec());
        f(&format!("{prefix}.b"), self.b.as_slice().unwrap(), &self.b.shape().to_vec());
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice_mut().unwrap());
        f(&format!("{prefix}.b"), self.b.as_slice_mut().unwrap());
    }
    fn visit_grads(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w"), self.gw.as_slice().unwrap());
        f(&format!("{prefix}.b"), self.gb.as_slice().unwrap());
    }
    fn visit_grads_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.gw.as_slice_mut().unwrap());
        f(&format!("{prefix}.b"), self.gb.as_slice_mut().unwrap());
    }
    fn sgd(&mut self, lr: f64) {
        self.w.zip_mut_with(&self.gw, |p, &g| *p -= lr * g);
        self.b.zip_mut_with(&self.gb, |p, &g| *p -= lr * g);
    }
}

impl ParamStore for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        f(&format!("{prefix}.w"), self.w.as_slice().unwrap(), &self.w.shape().to_vec());
        f(&format!("{prefix}.b"), self.b.as_slice().unwrap(), &self.b.shape().to_vec());
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice_mut().unwrap());
        f(&format!("{prefix}.b"), self.b.as_slice_mut().unwrap());
    }
    fn visit_grads(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w"), self.gw.as_slice().unwrap());
        f(&format!("{prefix}.b"), self.gb.as_slice().unwrap());
    }
    fn visit_grads_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.gw.as_slice_mut().unwrap());
        f(&format!("{prefix}.b"), self.gb.as_slice_mut().unwrap());
    }
    fn sgd(&mut self, lr: f64) {
        self.w.zip_mut_with(&self.gw, |p, &g| *p -= lr * g);
        self.b.zip_mut_with(&self.gb, |p, &g| *p -= lr * g);
    }
}

impl ParamStore for Gru {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        f(&format!("{prefix}.w_ih"), self.w_ih.as_slice().unwrap(), &self.w_ih.shape().to_vec());
        f(&format!("{prefix}.w_hh"), self.w_hh.as_slice().unwrap(), &self.w_hh.shape().to_vec());
        f(&format!("{prefix}.b_ih"), self.b_ih.as_slice().unwrap(), &self.b_ih.shape().to_vec());
        f(&format!("{prefix}.b_hh"), self.b_hh.as_slice().unwrap(), &self.b_hh.shape().to_vec());
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w_ih"), self.w_ih.as_slice_mut().unwrap());
        f(&format!("{prefix}.w_hh"), self.w_hh.as_slice_mut().unwrap());
        f(&format!("{prefix}.b_ih"), self.b_ih.as_slice_mut().unwrap());
        f(&format!("{prefix}.b_hh"), self.b_hh.as_slice_mut().unwrap());
    }
    fn visit_grads(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&format!("{prefix}.w_ih"), self.gw_ih.as_slice().unwrap());
        f(&format!("{prefix}.w_hh"), self.gw_hh.as_slice().unwrap());
        f(&format!("{prefix}.b_ih"), self.gb_ih.as_slice().unwrap());
        f(&format!("{prefix}.b_hh"), self.gb_hh.as_slice().unwrap());
    }
    fn visit_grads_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w_ih"), self.gw_ih.as_slice_mut().unwrap());
        f(&format!("{prefix}.w_hh"), self.gw_hh.as_slice_mut().unwrap());
        f(&format!("{prefix}.b_ih"), self.gb_ih.as_slice_mut().unwrap());
        f(&format!("{prefix}.b_hh"), self.gb_hh.as_slice_mut().unwrap());
    }
    fn sgd(&mut self, lr: f64) {
        self.w_ih.zip_mut_with(&self.gw_ih, |p, &g| *p -= lr * g);
        self.w_hh.zip_mut_with(&self.gw_hh, |p, &g| *p -= lr * g);
        self.b_ih.zip_mut_with(&self.gb_ih, |p, &g| *p -= lr * g);
        self.b_hh.zip_mut_with(&self.gb_hh, |p, &g| *p -= lr * g);
    }
}
