//! Experiment manifests: UTF-8 TSV `utt_id<TAB>path<TAB>transcript`, with
//! an optional fourth duration column. Durations missing from the file are
//! read from the WAV header.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{wav_duration_seconds, AudioError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub audio_path: PathBuf,
    pub transcript: String,
    pub duration_s: f64,
}

/// Load a manifest, resolving relative audio paths against the manifest's
/// directory. All problems are collected into one itemized error.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            problems.push(format!("line {}: expected 3+ tab-separated columns", i + 1));
            continue;
        }
        let utt_id = fields[0].to_string();
        if !seen.insert(utt_id.clone()) {
            problems.push(format!("line {}: duplicate utt_id {utt_id}", i + 1));
            continue;
        }
        let audio_path = {
            let p = Path::new(fields[1]);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let transcript = fields[2].to_string();
        let duration_s = if fields.len() >= 4 && !fields[3].is_empty() {
            match fields[3].parse::<f64>() {
                Ok(d) if d > 0.0 => d,
                _ => {
                    problems.push(format!("line {}: bad duration {:?}", i + 1, fields[3]));
                    continue;
                }
            }
        } else {
            match wav_duration_seconds(&audio_path) {
                Ok(d) => d,
                Err(_) => {
                    problems.push(format!(
                        "line {}: utt_id {utt_id}: cannot read {}",
                        i + 1,
                        audio_path.display()
                    ));
                    continue;
                }
            }
        };
        entries.push(ManifestEntry {
            utt_id,
            audio_path,
            transcript,
            duration_s,
        });
    }
    if !problems.is_empty() {
        return Err(AudioError::Manifest {
            path: path.display().to_string(),
            problems,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[(String, PathBuf, String)]) -> Result<()> {
    let mut text = String::new();
    for (utt_id, audio, transcript) in entries {
        let _ = writeln!(text, "{utt_id}\t{}\t{transcript}", audio.display());
    }
    std::fs::write(path, text).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
