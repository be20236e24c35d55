//! Bit-exact checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "VQPC"
//! version u16      currently 1; unknown versions are rejected
//! count   u32      number of arrays
//! table   count ×  name_len: u16, name: UTF-8 bytes,
//!                  dtype: u8 (1 = f32), rank: u8,
//!                  shape: rank × u32, offset: u64 (bytes into payload)
//! payload          f32 arrays, row-major
//! ```
//!
//! Values are stored as 32-bit floats: training computes at 64-bit, and
//! serialization narrows with round-to-nearest. Reading back and saving again
//! is byte-identical, so round-trips after the first narrowing are bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Result, VqpError};
use crate::net::{EncoderConfig, Model, NetConfig};
use crate::vq::{Codebook, CodebookCounter, CounterMode};

const MAGIC: &[u8; 4] = b"VQPC";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;

/// Named f32 arrays with shapes; iteration order is by name so the byte
/// encoding is canonical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

fn corrupt(why: impl Into<String>) -> VqpError {
    VqpError::CorruptContainer(why.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(|s| s.as_str())
    }

    /// Insert an f32 array. The shape product must match the data length.
    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(VqpError::ShapeError(format!(
                "array '{name}': shape {shape:?} needs {expect} values, got {}",
                data.len()
            )));
        }
        self.arrays.insert(name.to_string(), (shape.to_vec(), data));
        Ok(())
    }

    /// Insert 64-bit data, narrowing to f32 (round-to-nearest).
    pub fn insert_f64(&mut self, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        self.insert(name, shape, data.iter().map(|&v| v as f32).collect())
    }

    /// Insert a rank-0 scalar.
    pub fn insert_scalar(&mut self, name: &str, value: f32) -> Result<()> {
        self.insert(name, &[], vec![value])
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.arrays
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
    }

    fn require(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.get(name)
            .ok_or_else(|| corrupt(format!("missing array '{name}'")))
    }

    pub fn scalar(&self, name: &str) -> Result<f32> {
        let (shape, data) = self.require(name)?;
        if !shape.is_empty() || data.len() != 1 {
            return Err(corrupt(format!("array '{name}' is not a scalar")));
        }
        Ok(data[0])
    }

    // ---- byte encoding ----

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut table = Vec::new();
        let mut payload = Vec::new();
        for (name, (shape, data)) in &self.arrays {
            table.extend_from_slice(&(name.len() as u16).to_le_bytes());
            table.extend_from_slice(name.as_bytes());
            table.push(DTYPE_F32);
            table.push(shape.len() as u8);
            for &s in shape {
                table.extend_from_slice(&(s as u32).to_le_bytes());
            }
            table.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(4 + 2 + 4 + table.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        out.extend_from_slice(&table);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .ok_or_else(|| corrupt("length overflow"))?;
            if end > buf.len() {
                return Err(corrupt("truncated file"));
            }
            let s = &buf[*pos..end];
            *pos = end;
            Ok(s)
        };

        let magic = take(&mut pos, 4)?;
        if magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if version != VERSION {
            return Err(VqpError::UnsupportedVersion(version));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;

        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len =
                u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| corrupt("array name is not UTF-8"))?
                .to_string();
            let dtype = take(&mut pos, 1)?[0];
            if dtype != DTYPE_F32 {
                return Err(corrupt(format!("array '{name}': unsupported dtype {dtype}")));
            }
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            entries.push((name, shape, offset));
        }

        let payload = &buf[pos..];
        let mut arrays = BTreeMap::new();
        let mut payload_used = 0usize;
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let bytes = n
                .checked_mul(4)
                .ok_or_else(|| corrupt("length overflow"))?;
            let end = offset
                .checked_add(bytes)
                .ok_or_else(|| corrupt("length overflow"))?;
            if end > payload.len() {
                return Err(corrupt(format!("array '{name}' extends past end of file")));
            }
            let data: Vec<f32> = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            payload_used = payload_used.max(end);
            if arrays.insert(name.clone(), (shape, data)).is_some() {
                return Err(corrupt(format!("duplicate array '{name}'")));
            }
        }
        if payload_used != payload.len() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Checkpoint { arrays })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| VqpError::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| VqpError::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

// ---- model/counter packing ----

fn config_arrays(ck: &mut Checkpoint, cfg: &NetConfig) -> Result<()> {
    let e = &cfg.encoder;
    ck.insert_scalar("config.n_mels", cfg.n_mels as f32)?;
    ck.insert_scalar("config.codebook_size", cfg.codebook_size as f32)?;
    ck.insert_scalar("config.mel_shift", cfg.mel_shift as f32)?;
    ck.insert_scalar("config.mel_scale", cfg.mel_scale as f32)?;
    ck.insert_scalar("config.conv_channels", e.conv_channels as f32)?;
    ck.insert_scalar("config.n_residual_blocks", e.n_residual_blocks as f32)?;
    ck.insert_scalar("config.latent_dim", e.latent_dim as f32)?;
    ck.insert_scalar("config.gru_units", e.gru_units as f32)?;
    ck.insert_scalar("config.proj_units", e.proj_units as f32)?;
    ck.insert(
        "config.kernel_sizes",
        &[e.kernel_sizes.len()],
        e.kernel_sizes.iter().map(|&k| k as f32).collect(),
    )?;
    ck.insert(
        "config.strides",
        &[e.strides.len()],
        e.strides.iter().map(|&s| s as f32).collect(),
    )?;
    Ok(())
}

fn config_from_arrays(ck: &Checkpoint) -> Result<NetConfig> {
    let us = |name: &str| -> Result<usize> {
        let v = ck.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(corrupt(format!("'{name}' is not a count: {v}")));
        }
        Ok(v as usize)
    };
    let vec_us = |name: &str| -> Result<Vec<usize>> {
        let (_, data) = ck.require(name)?;
        data.iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 {
                    Err(corrupt(format!("'{name}' holds a non-count: {v}")))
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    };
    Ok(NetConfig {
        n_mels: us("config.n_mels")?,
        codebook_size: us("config.codebook_size")?,
        mel_shift: ck.scalar("config.mel_shift")? as f64,
        mel_scale: ck.scalar("config.mel_scale")? as f64,
        encoder: EncoderConfig {
            conv_channels: us("config.conv_channels")?,
            kernel_sizes: vec_us("config.kernel_sizes")?
                .try_into()
                .map_err(|_| corrupt("config.kernel_sizes must hold 4 entries"))?,
            strides: vec_us("config.strides")?
                .try_into()
                .map_err(|_| corrupt("config.strides must hold 4 entries"))?,
            n_residual_blocks: us("config.n_residual_blocks")?,
            latent_dim: us("config.latent_dim")?,
            gru_units: us("config.gru_units")?,
            proj_units: us("config.proj_units")?,
        },
    })
}

/// Pack model parameters, codebook, counter, and config into a container.
pub fn checkpoint_from_model(model: &Model, counter: &CodebookCounter) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    let mut err = None;
    model.visit_params(&mut |name, data, shape| {
        if err.is_none() {
            if let Err(e) = ck.insert_f64(name, shape, data) {
                err = Some(e);
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let (k, d) = model.book.entries.dim();
    ck.insert_f64(
        "codebook",
        &[k, d],
        model.book.entries.as_slice().expect("contiguous"),
    )?;
    ck.insert_f64(
        "counter.accum",
        &[counter.accum.len()],
        counter.accum.as_slice().expect("contiguous"),
    )?;
    // Exact for any realistic step count (f32 integers are exact to 2^24).
    ck.insert_scalar("counter.steps", counter.steps as f32)?;
    ck.insert_scalar(
        "counter.mode",
        match counter.mode {
            CounterMode::MeanThenAbs => 0.0,
            CounterMode::AbsThenMean => 1.0,
        },
    )?;
    config_arrays(&mut ck, &model.cfg)?;
    Ok(ck)
}

/// Write a training checkpoint. Stored as arrays: every parameter group by
/// name, "codebook", "counter.accum"/"counter.steps"/"counter.mode", and the
/// "config.*" scalars needed to rebuild the architecture.
pub fn save_checkpoint(model: &Model, counter: &CodebookCounter, path: &Path) -> Result<()> {
    checkpoint_from_model(model, counter)?.write_to(path)
}

/// Rebuild a runnable model (and its counter) from a container.
///
/// Parameters load at f32 precision widened to f64; inference after a
/// round-trip is deterministic but not bit-identical to the pre-narrowing
/// model.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(Model, CodebookCounter)> {
    let cfg = config_from_arrays(ck)?;
    let mut model = Model::new(cfg, 0)?;

    let mut missing: Vec<String> = Vec::new();
    let mut mismatch: Vec<String> = Vec::new();
    model.visit_params_mut(&mut |name, data| match ck.get(name) {
        Some((_, stored)) if stored.len() == data.len() => {
            for (d, &s) in data.iter_mut().zip(stored) {
                *d = s as f64;
            }
        }
        Some(_) => mismatch.push(name.to_string()),
        None => missing.push(name.to_string()),
    });
    if let Some(name) = missing.first() {
        return Err(corrupt(format!("missing array '{name}'")));
    }
    if let Some(name) = mismatch.first() {
        return Err(corrupt(format!("array '{name}' has the wrong size")));
    }

    let (shape, data) = ck.require("codebook")?;
    if shape.len() != 2 {
        return Err(corrupt("codebook is not rank-2"));
    }
    let entries = Array2::from_shape_vec(
        (shape[0], shape[1]),
        data.iter().map(|&v| v as f64).collect(),
    )
    .map_err(|_| corrupt("codebook shape mismatch"))?;
    model.book = Codebook::new(entries)?;

    let (ashape, adata) = ck.require("counter.accum")?;
    if ashape.len() != 1 {
        return Err(corrupt("counter.accum is not rank-1"));
    }
    let steps_f = ck.scalar("counter.steps")?;
    if steps_f < 0.0 || steps_f.fract() != 0.0 {
        return Err(corrupt(format!("counter.steps is not a count: {steps_f}")));
    }
    let mode = match ck.scalar("counter.mode")? {
        v if v == 0.0 => CounterMode::MeanThenAbs,
        v if v == 1.0 => CounterMode::AbsThenMean,
        v => return Err(corrupt(format!("unknown counter mode {v}"))),
    };
    let counter = CodebookCounter {
        accum: Array1::from_iter(adata.iter().map(|&v| v as f64)),
        steps: steps_f as u64,
        mode,
    };
    if counter.accum.len() != model.latent_dim() {
        return Err(corrupt("counter dimension does not match the codebook"));
    }

    Ok((model, counter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn demo_checkpoint() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert("b.mat", &[2, 3], vec![1.0, -2.5, 3.25, 0.0, 5.5, -6.125])
            .unwrap();
        ck.insert("a.vec", &[4], vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        ck.insert_scalar("c.scalar", 7.75).unwrap();
        ck
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ck = demo_checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck, back);
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("demo.vqpc");
        let ck = demo_checkpoint();
        ck.write_to(&path).unwrap();
        assert_eq!(Checkpoint::read_from(&path).unwrap(), ck);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = demo_checkpoint().to_bytes();
        for cut in 0..bytes.len() {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, VqpError::CorruptContainer(_)),
                "cut at {cut}: {err}"
            );
        }
    }

    #[test]
    fn bad_magic_and_unknown_version_are_rejected() {
        let mut bytes = demo_checkpoint().to_bytes();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&wrong),
            Err(VqpError::CorruptContainer(_))
        ));
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(VqpError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = demo_checkpoint().to_bytes();
        bytes.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(VqpError::CorruptContainer(_))
        ));
    }

    #[test]
    fn single_array_container_is_valid() {
        let mut ck = Checkpoint::new();
        ck.insert("codebook", &[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.get("codebook").unwrap().1, &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_product_must_match() {
        let mut ck = Checkpoint::new();
        assert!(ck.insert("x", &[2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn model_round_trip_restores_everything() {
        let model = Model::new(NetConfig::default(), 3).unwrap();
        let mut counter = CodebookCounter::new(model.latent_dim(), CounterMode::AbsThenMean);
        for (i, a) in counter.accum.iter_mut().enumerate() {
            *a = i as f64 * 0.125; // exact in f32
        }
        counter.steps = 17;

        let ck = checkpoint_from_model(&model, &counter).unwrap();
        let bytes = ck.to_bytes();
        let (loaded, counter2) = model_from_checkpoint(&ck).unwrap();

        // Saving the loaded model reproduces the container byte-for-byte:
        // narrowing is idempotent after the first pass.
        let ck2 = checkpoint_from_model(&loaded, &counter2).unwrap();
        assert_eq!(bytes, ck2.to_bytes());

        assert_eq!(counter2.steps, 17);
        assert_eq!(counter2.mode, CounterMode::AbsThenMean);
        assert_eq!(loaded.cfg, model.cfg);

        // Loaded parameters equal the narrowed originals.
        let mut orig = Vec::new();
        model.visit_params(&mut |name, data, _| {
            orig.push((name.to_string(), data.iter().map(|&v| v as f32).collect::<Vec<_>>()));
        });
        let mut i = 0;
        loaded.visit_params(&mut |name, data, _| {
            assert_eq!(orig[i].0, name);
            let narrowed: Vec<f32> = data.iter().map(|&v| v as f32).collect();
            assert_eq!(orig[i].1, narrowed, "{name}");
            i += 1;
        });
    }

    #[test]
    fn loaded_model_encodes_deterministically() {
        let corpus = crate::train::generate_corpus(1, 5).unwrap();
        let mel = crate::dsp::mel_spectrogram(&corpus[0].wave, 80, 0.0, 8000.0).unwrap();
        let model = Model::new(NetConfig::default(), 3).unwrap();
        let counter = CodebookCounter::new(model.latent_dim(), CounterMode::MeanThenAbs);
        let ck = checkpoint_from_model(&model, &counter).unwrap();
        let (loaded, _) = model_from_checkpoint(&ck).unwrap();
        let a = loaded.encode(&mel).unwrap();
        let b = loaded.encode(&mel).unwrap();
        assert_eq!(a.z_q_sequence, b.z_q_sequence);
        assert_eq!(a.indices, b.indices);
    }
}
