//! Corpus manifests: one tab-separated record per utterance.
//!
//! Columns: `id`, `path`, then optional `base_f0`, `tempo`, `pitch_var`
//! (all three present or all empty), and an optional free-text transcript.
//! Relative audio paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Result, VqpError};
use crate::train::Factors;

const HEADER: &str = "id\tpath\tbase_f0\ttempo\tpitch_var\ttranscript";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Audio path as written in the manifest (possibly relative).
    pub path: PathBuf,
    pub factors: Option<Factors>,
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

fn err(why: impl Into<String>) -> VqpError {
    VqpError::Manifest(why.into())
}

fn fmt_factor(v: f64) -> String {
    format!("{v:.9}")
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = CorpusManifest { entries };
        m.check_unique_ids()?;
        Ok(m)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(err(format!("duplicate id '{}'", e.id)));
            }
        }
        Ok(())
    }

    /// Canonical text form; identical manifests serialize to identical bytes.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for e in &self.entries {
            let (f0, te, pv) = match &e.factors {
                Some(f) => (
                    fmt_factor(f.base_f0),
                    fmt_factor(f.tempo),
                    fmt_factor(f.pitch_var),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.path.display(),
                f0,
                te,
                pv,
                e.transcript.as_deref().unwrap_or("")
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == HEADER => {}
            Some(h) => return Err(err(format!("unexpected header '{h}'"))),
            None => return Err(err("empty manifest")),
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(err(format!(
                    "line {}: expected 6 columns, found {}",
                    lineno + 2,
                    cols.len()
                )));
            }
            if cols[0].is_empty() || cols[1].is_empty() {
                return Err(err(format!("line {}: id and path are required", lineno + 2)));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| err(format!("line {}: bad {what} '{s}'", lineno + 2)))
            };
            let factors = match (cols[2], cols[3], cols[4]) {
                ("", "", "") => None,
                (f0, te, pv) if !f0.is_empty() && !te.is_empty() && !pv.is_empty() => {
                    Some(Factors {
                        base_f0: parse(f0, "base_f0")?,
                        tempo: parse(te, "tempo")?,
                        pitch_var: parse(pv, "pitch_var")?,
                    })
                }
                _ => {
                    return Err(err(format!(
                        "line {}: factor labels must all be present or all empty",
                        lineno + 2
                    )))
                }
            };
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                path: PathBuf::from(cols[1]),
                factors,
                transcript: if cols[5].is_empty() {
                    None
                } else {
                    Some(cols[5].to_string())
                },
            });
        }
        Self::new(entries)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| VqpError::io(path, e))
    }

    /// Load a manifest and verify every referenced audio path exists,
    /// resolving relative paths against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VqpError::io(path, e))?;
        let m = Self::from_tsv(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for e in &m.entries {
            let resolved = e.resolve(base);
            if !resolved.exists() {
                return Err(err(format!(
                    "entry '{}': audio file {} does not exist",
                    e.id,
                    resolved.display()
                )));
            }
        }
        Ok(m)
    }
}

impl ManifestEntry {
    /// Absolute audio path given the manifest's directory.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            base.join(&self.path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn demo() -> CorpusManifest {
        CorpusManifest::new(vec![
            ManifestEntry {
                id: "utt_000".into(),
                path: "wav/utt_000.wav".into(),
                factors: Some(Factors { base_f0: 180.5, tempo: 3.25, pitch_var: 0.75 }),
                transcript: None,
            },
            ManifestEntry {
                id: "utt_001".into(),
                path: "wav/utt_001.wav".into(),
                factors: None,
                transcript: Some("la la la".into()),
            },
        ])
        .unwrap()
    }

    #[test]
    fn tsv_round_trip_is_byte_stable() {
        let m = demo();
        let text = m.to_tsv();
        let back = CorpusManifest::from_tsv(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_tsv(), text);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut m = demo();
        m.entries[1].id = "utt_000".into();
        let text = m.to_tsv();
        assert!(matches!(
            CorpusManifest::from_tsv(&text),
            Err(VqpError::Manifest(_))
        ));
    }

    #[test]
    fn partial_factor_labels_are_rejected() {
        let text = format!("{HEADER}\nu0\twav/u0.wav\t100.0\t\t\t\n");
        assert!(matches!(
            CorpusManifest::from_tsv(&text),
            Err(VqpError::Manifest(_))
        ));
    }

    #[test]
    fn load_checks_referenced_paths() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("corpus.tsv");
        let m = demo();
        m.write_to(&mpath).unwrap();
        // Files absent: load must fail.
        assert!(matches!(
            CorpusManifest::load(&mpath),
            Err(VqpError::Manifest(_))
        ));
        // Create them and load again.
        std::fs::create_dir(dir.path().join("wav")).unwrap();
        for name in ["utt_000.wav", "utt_001.wav"] {
            std::fs::write(dir.path().join("wav").join(name), b"x").unwrap();
        }
        let loaded = CorpusManifest::load(&mpath).unwrap();
        assert_eq!(loaded, m);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(CorpusManifest::from_tsv("id,path\n").is_err());
        assert!(CorpusManifest::from_tsv("").is_err());
    }
}
