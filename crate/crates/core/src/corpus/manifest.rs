//! Manifest CSV plus one PCM16 WAV file per utterance.
//!
//! Columns: `id,dialog_id,audio_path,sample_rate,transcript,votes,label`.
//! Transcript tokens are space separated, votes are `|` separated and an
//! empty label cell means unresolved. `audio_path` is relative to the
//! manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, SentimentLabel, Utterance};
use crate::error::{Error, Result};

const AUDIO_DIR: &str = "audio";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    dialog_id: String,
    audio_path: String,
    sample_rate: u32,
    transcript: String,
    votes: String,
    label: String,
}

fn safe_name(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

/// Writes `<dir>/<corpus name>.csv` and `<dir>/audio/<id>.wav`; returns the
/// manifest path. The corpus name becomes the file stem, which is how
/// [`load_manifest`] recovers it.
pub fn save_manifest(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if !safe_name(corpus.name()) {
        return Err(Error::invalid(format!(
            "corpus name {:?} cannot be used as a file name",
            corpus.name()
        )));
    }
    let audio_dir = dir.join(AUDIO_DIR);
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;

    let manifest_path = dir.join(format!("{}.csv", corpus.name()));
    let mut writer =
        csv::Writer::from_path(&manifest_path).map_err(|e| Error::format(&manifest_path, "open", e.to_string()))?;
    for u in corpus.utterances() {
        if !safe_name(&u.id) {
            return Err(Error::invalid(format!(
                "utterance id {:?} cannot be used as a file name",
                u.id
            )));
        }
        let audio_path = if u.samples.is_empty() {
            String::new()
        } else {
            let rel = format!("{AUDIO_DIR}/{}.wav", u.id);
            write_wav(&dir.join(&rel), &u.samples, u.sample_rate)?;
            rel
        };
        let row = Row {
            id: u.id.clone(),
            dialog_id: u.dialog_id.clone(),
            audio_path,
            sample_rate: u.sample_rate,
            transcript: u.transcript.join(" "),
            votes: u.votes.join("|"),
            label: u.label.map(|l| l.name().to_string()).unwrap_or_default(),
        };
        writer
            .serialize(&row)
            .map_err(|e| Error::format(&manifest_path, format!("utterance {}", u.id), e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Reads a manifest written by [`save_manifest`] (or by hand).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();

    let mut utterances = Vec::new();
    if !text.trim().is_empty() {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for (i, record) in reader.deserialize::<Row>().enumerate() {
            // Header is line 1.
            let location = format!("row {}", i + 2);
            let row = record.map_err(|e| Error::format(path, &location, e.to_string()))?;
            utterances.push(row_to_utterance(row, base, path, &location)?);
        }
    }
    Corpus::new(name, utterances)
}

fn split_nonempty(s: &str, sep: char) -> Vec<String> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(sep).map(str::to_string).collect()
    }
}

fn row_to_utterance(row: Row, base: &Path, manifest: &Path, location: &str) -> Result<Utterance> {
    let at = |msg: String| Error::format(manifest, format!("{location} ({})", row.id), msg);
    if row.sample_rate == 0 {
        return Err(at("sample_rate must be positive".into()));
    }
    let label = if row.label.is_empty() {
        None
    } else {
        Some(row.label.parse::<SentimentLabel>().map_err(|e| at(e.to_string()))?)
    };
    let samples = if row.audio_path.is_empty() {
        Vec::new()
    } else {
        let wav = base.join(&row.audio_path);
        if !wav.is_file() {
            return Err(at(format!("missing audio file {}", wav.display())));
        }
        let (samples, rate) = read_wav(&wav)?;
        if rate != row.sample_rate {
            return Err(at(format!(
                "{} is {rate} Hz but the manifest says {} Hz",
                wav.display(),
                row.sample_rate
            )));
        }
        samples
    };
    Ok(Utterance {
        transcript: row.transcript.split_whitespace().map(str::to_string).collect(),
        votes: split_nonempty(&row.votes, '|'),
        id: row.id,
        dialog_id: row.dialog_id,
        samples,
        sample_rate: row.sample_rate,
        label,
    })
}

/// Mono PCM16. Samples are scaled by 32768 and clamped.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| Error::format(path, "wav", e.to_string());
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Reads a mono 16-bit WAV into samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let wrap = |e: hound::Error| Error::format(path, "wav", e.to_string());
    let mut reader = hound::WavReader::open(path).map_err(wrap)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(path, "wav", "expected mono 16-bit PCM"));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wrap)?;
    Ok((samples, spec.sample_rate))
}
