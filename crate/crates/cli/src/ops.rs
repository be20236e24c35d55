//! Subcommand implementations: thin shells over the library.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use vqp_core::ckpt::{model_from_checkpoint, save_checkpoint, Checkpoint};
use vqp_core::dsp::{
    mel_spectrogram, mfcc, yin_pitch, MelSpectrogram, PitchTrack, Waveform, YinConfig,
};
use vqp_core::manifest::{CorpusManifest, ManifestEntry};
use vqp_core::metrics::evaluate_pair;
use vqp_core::net::Model;
use vqp_core::report::{
    counter_svg, counter_table, eval_report, spectrogram_grid_svg, train_log_tsv,
};
use vqp_core::train::{
    disentangle_from_parts, generate_corpus, manipulation_sweep, train_with_observer, Factors,
    TrainConfig,
};
use vqp_core::vq::CodebookCounter;
use vqp_core::{Result, VqpError};

use crate::Command;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData { count, seed, out } => synth_data(count, seed, &out_dir(out)?),
        Command::Extract { manifest, n_coeffs, out } => {
            extract(&manifest, n_coeffs, &out_dir(out)?)
        }
        Command::Train {
            manifest,
            steps,
            lr,
            batch_size,
            beta,
            seed,
            counter_mode,
            init,
            checkpoint_every,
            out,
        } => {
            let cfg = TrainConfig {
                lr,
                batch_size,
                steps,
                beta,
                seed,
                counter_mode,
                codebook_init: init,
            };
            train(&manifest, &cfg, checkpoint_every, &out_dir(out)?)
        }
        Command::CounterReport { checkpoint, out } => counter_report(&checkpoint, &out_dir(out)?),
        Command::Eval { reference, generated, dtw, tolerance, n_coeffs, out } => {
            eval(&reference, &generated, dtw, tolerance, n_coeffs, &out_dir(out)?)
        }
        Command::Manipulate { checkpoint, wav, dim, values, mode, out } => {
            manipulate(&checkpoint, &wav, dim, &values, mode, &out_dir(out)?)
        }
        Command::Correlate { checkpoint, manifest, out } => {
            correlate(&checkpoint, &manifest, &out_dir(out)?)
        }
    }
}

/// Resolve the output directory (flag, then environment, then `.`) and make
/// sure it exists.
fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os(crate::OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| VqpError::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| VqpError::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Shortest round-trip decimal form, matching the library's report style.
fn num(v: f64) -> String {
    format!("{v}")
}

fn load_model(path: &Path) -> Result<(Model, CodebookCounter)> {
    model_from_checkpoint(&Checkpoint::read_from(path)?)
}

fn load_wave(path: &Path) -> Result<Waveform> {
    Waveform::from_wav_file(path)
}

fn wave_mel(wave: &Waveform, n_mels: usize) -> Result<MelSpectrogram> {
    let sr = wave.sample_rate() as f64;
    mel_spectrogram(wave, n_mels, 0.0, sr / 2.0)
}

fn wave_pitch(wave: &Waveform) -> Result<PitchTrack> {
    let cfg = YinConfig::default();
    yin_pitch(wave, cfg.f_min, cfg.f_max, cfg.threshold)
}

/// Manifest entries with their audio loaded, in manifest order.
fn load_entries(manifest: &Path) -> Result<(CorpusManifest, Vec<Waveform>)> {
    let man = CorpusManifest::load(manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let waves = man
        .entries
        .iter()
        .map(|e| load_wave(&e.resolve(base)))
        .collect::<Result<Vec<_>>>()?;
    Ok((man, waves))
}

fn synth_data(count: usize, seed: u64, out: &Path) -> Result<()> {
    let corpus = generate_corpus(count, seed)?;
    let wav_dir = out.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| VqpError::io(&wav_dir, e))?;

    let mut entries = Vec::with_capacity(corpus.len());
    for (i, utt) in corpus.iter().enumerate() {
        let id = format!("utt_{i:04}");
        let rel = PathBuf::from("wavs").join(format!("{id}.wav"));
        utt.wave.to_wav_file(out.join(&rel))?;
        let transcript = utt
            .notes
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        entries.push(ManifestEntry {
            id,
            path: rel,
            factors: Some(utt.factors),
            transcript: Some(transcript),
        });
    }

    let manifest = CorpusManifest::new(entries)?;
    manifest.write_to(&out.join("corpus.tsv"))?;
    println!(
        "wrote {} utterances under {} and manifest {}",
        corpus.len(),
        wav_dir.display(),
        out.join("corpus.tsv").display()
    );
    Ok(())
}

fn extract(manifest: &Path, n_coeffs: usize, out: &Path) -> Result<()> {
    let (man, waves) = load_entries(manifest)?;
    let feat_dir = out.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| VqpError::io(&feat_dir, e))?;

    for (entry, wave) in man.entries.iter().zip(&waves) {
        let mel = wave_mel(wave, 80)?;
        let cep = mfcc(&mel, n_coeffs)?;
        let pitch = wave_pitch(wave)?;

        let mut ck = Checkpoint::new();
        insert_matrix(&mut ck, "mel", &mel.frames)?;
        insert_matrix(&mut ck, "mfcc", &cep.frames)?;
        ck.insert_f64("f0", &[pitch.f0_hz.len()], &pitch.f0_hz)?;
        let voiced: Vec<f64> = pitch.voiced.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        ck.insert_f64("voiced", &[voiced.len()], &voiced)?;
        ck.insert_scalar("sample_rate", wave.sample_rate() as f32)?;
        ck.write_to(&feat_dir.join(format!("{}.vqpc", entry.id)))?;
    }
    println!("wrote {} feature files under {}", man.entries.len(), feat_dir.display());
    Ok(())
}

fn insert_matrix(ck: &mut Checkpoint, name: &str, m: &Array2<f64>) -> Result<()> {
    let owned = m.as_standard_layout();
    let flat = owned.as_slice().expect("standard layout is contiguous");
    ck.insert_f64(name, &[m.nrows(), m.ncols()], flat)
}

fn train(manifest: &Path, cfg: &TrainConfig, every: usize, out: &Path) -> Result<()> {
    let (_, waves) = load_entries(manifest)?;
    let mels = waves
        .iter()
        .map(|w| wave_mel(w, 80))
        .collect::<Result<Vec<_>>>()?;

    let outcome = train_with_observer(&mels, cfg, &mut |step, model, counter| {
        if every > 0 && step % every == 0 && step != cfg.steps {
            let path = out.join(format!("model_step{step:05}.vqpc"));
            save_checkpoint(model, counter, &path)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    })?;

    save_checkpoint(&outcome.model, &outcome.log.counter, &out.join("model.vqpc"))?;
    println!("wrote {}", out.join("model.vqpc").display());
    write_text(&out.join("trainlog.tsv"), &train_log_tsv(&outcome.log))?;

    let last = outcome.log.records.last().expect("steps >= 1");
    println!(
        "trained {} steps: recon {} (ratio vs first 10: {}), codebook {}, commitment {}",
        last.step,
        num(last.recon),
        num(outcome.log.recon_ratio(10)),
        num(last.codebook),
        num(last.commitment)
    );
    Ok(())
}

fn counter_report(checkpoint: &Path, out: &Path) -> Result<()> {
    let (_, counter) = load_model(checkpoint)?;
    let table = counter_table(&counter)?;
    write_text(&out.join("counter.tsv"), &table)?;
    write_text(&out.join("counter.svg"), &counter_svg(&counter)?)?;
    print!("{table}");
    Ok(())
}

fn eval(
    reference: &Path,
    generated: &Path,
    dtw: bool,
    tolerance: f64,
    n_coeffs: usize,
    out: &Path,
) -> Result<()> {
    let (ref_man, ref_waves) = load_entries(reference)?;
    let (gen_man, gen_waves) = load_entries(generated)?;

    let gen_by_id: BTreeMap<&str, &Waveform> = gen_man
        .entries
        .iter()
        .zip(&gen_waves)
        .map(|(e, w)| (e.id.as_str(), w))
        .collect();

    let mut rows = Vec::with_capacity(ref_man.entries.len());
    for (entry, ref_wave) in ref_man.entries.iter().zip(&ref_waves) {
        let gen_wave = *gen_by_id.get(entry.id.as_str()).ok_or_else(|| {
            VqpError::Manifest(format!(
                "generated manifest has no entry for id '{}'",
                entry.id
            ))
        })?;

        let ref_pitch = wave_pitch(ref_wave)?;
        let gen_pitch = wave_pitch(gen_wave)?;
        let ref_cep = mfcc(&wave_mel(ref_wave, 80)?, n_coeffs)?;
        let gen_cep = mfcc(&wave_mel(gen_wave, 80)?, n_coeffs)?;
        let report = evaluate_pair(&ref_pitch, &gen_pitch, &ref_cep, &gen_cep, tolerance, dtw)?;
        rows.push((entry.id.clone(), report));
    }

    let (detail, summary) = eval_report(&rows);
    write_text(&out.join("eval.tsv"), &detail)?;
    write_text(&out.join("eval_summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn manipulate(
    checkpoint: &Path,
    wav: &Path,
    dim: usize,
    values: &[f64],
    mode: vqp_core::vq::ManipulateMode,
    out: &Path,
) -> Result<()> {
    let (model, _) = load_model(checkpoint)?;
    let wave = load_wave(wav)?;
    let mel = wave_mel(&wave, model.cfg.n_mels)?;
    let sweeps = manipulation_sweep(&model, &mel, dim, values, mode)?;

    let mut stats = String::from("value\tspectral_centroid\tframes\n");
    let mut panels: Vec<(String, &Array2<f64>)> =
        vec![(String::from("input"), &mel.frames)];
    for s in &sweeps {
        let label = format!("dim {dim} = {}", num(s.value));
        let panel = spectrogram_grid_svg(&[(label.clone(), &s.mel)]);
        write_text(
            &out.join(format!("manipulate_dim{dim}_value{}.svg", num(s.value))),
            &panel,
        )?;
        panels.push((label, &s.mel));
        stats.push_str(&format!(
            "{}\t{}\t{}\n",
            num(s.value),
            num(s.spectral_centroid),
            s.frames
        ));
    }
    write_text(
        &out.join(format!("manipulate_dim{dim}_grid.svg")),
        &spectrogram_grid_svg(&panels),
    )?;
    write_text(&out.join(format!("manipulate_dim{dim}.tsv")), &stats)?;
    print!("{stats}");
    Ok(())
}

fn correlate(checkpoint: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let (model, counter) = load_model(checkpoint)?;
    let (man, waves) = load_entries(manifest)?;

    let labels = man
        .entries
        .iter()
        .map(|e| {
            e.factors.ok_or_else(|| {
                VqpError::Manifest(format!("entry '{}' is missing factor labels", e.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mels = waves
        .iter()
        .map(|w| wave_mel(w, model.cfg.n_mels))
        .collect::<Result<Vec<_>>>()?;

    let rep = disentangle_from_parts(&labels, &mels, &model, &counter)?;

    let mut corr = String::from("dim");
    for name in Factors::NAMES {
        corr.push('\t');
        corr.push_str(name);
    }
    corr.push('\n');
    for d in 0..rep.correlation.matrix.nrows() {
        corr.push_str(&(d + 1).to_string());
        for f in 0..rep.correlation.matrix.ncols() {
            corr.push('\t');
            corr.push_str(&num(rep.correlation.matrix[[d, f]]));
        }
        corr.push('\n');
    }
    write_text(&out.join("correlation.tsv"), &corr)?;

    let mut attr = String::from("factor\tdim\tr\tin_counter_top3\n");
    for a in &rep.attributions {
        attr.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            a.factor,
            a.dim,
            num(a.r),
            a.in_counter_top3
        ));
    }
    write_text(&out.join("attributions.tsv"), &attr)?;
    print!("{attr}");
    if rep.no_attribution {
        println!(
            "no attribution: strongest |r| is below {}; the table is noise",
            num(vqp_core::train::NO_ATTRIBUTION_THRESHOLD)
        );
    }
    Ok(())
}
