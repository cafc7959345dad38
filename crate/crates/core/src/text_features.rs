//! Tokenization and fixed-length 300-dimensional embedding sequences.
//!
//! Embeddings come from a precomputed table file; tokens missing from the
//! table (or every token, with the hashed provider) get a deterministic
//! pseudo-random unit vector derived from the token bytes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::is_nonverbal_token;
use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Table,
    Hashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub max_tokens: usize,
    pub pad_value: f64,
    pub provider: ProviderKind,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: EMBEDDING_DIM,
            max_tokens: 64,
            pad_value: 0.0,
            provider: ProviderKind::Hashed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence {
    /// `max_tokens x dim`; rows at or past `true_length` hold the pad value.
    pub values: Array2<f64>,
    pub true_length: usize,
}

/// Lowercases, splits on whitespace and strips punctuation. Bracketed
/// non-verbal markers such as `[laughter]` are kept whole.
pub fn tokenize(transcript: &str) -> Vec<String> {
    transcript
        .split_whitespace()
        .filter_map(|raw| {
            let lower = raw.to_lowercase();
            if is_nonverbal_token(&lower) {
                return Some(lower);
            }
            let cleaned: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
            (!cleaned.is_empty()).then_some(cleaned)
        })
        .collect()
}

/// Pre-computed vectors keyed by token.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingProvider {
    Hashed,
    /// Table lookup with hashed fallback for unknown tokens.
    Table(EmbeddingTable),
}

impl EmbeddingProvider {
    pub fn kind(&self) -> ProviderKind {
        match self {
            EmbeddingProvider::Hashed => ProviderKind::Hashed,
            EmbeddingProvider::Table(_) => ProviderKind::Table,
        }
    }

    pub fn write_vector(&self, token: &str, out: &mut [f64]) {
        if let EmbeddingProvider::Table(table) = self {
            if let Some(v) = table.get(token) {
                out.copy_from_slice(v);
                return;
            }
        }
        hashed_vector(token, out);
    }

    pub fn vector(&self, token: &str) -> Vec<f64> {
        let mut v = vec![0.0; EMBEDDING_DIM];
        self.write_vector(token, &mut v);
        v
    }
}

/// FNV-1a, stable across processes and platforms.
fn token_seed(token: &str) -> u64 {
    token.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn hashed_vector(token: &str, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(token_seed(token));
    for x in out.iter_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in out.iter_mut() {
        *x /= norm;
    }
}

/// Reads `token v1 ... v300` lines. Blank lines are skipped.
pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingProvider> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vectors = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let location = format!("line {}", i + 1);
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, &location, e.to_string()))?;
        if values.len() != EMBEDDING_DIM {
            return Err(Error::format(
                path,
                &location,
                format!("{} values for {token:?}, expected {EMBEDDING_DIM}", values.len()),
            ));
        }
        if vectors.insert(token.to_string(), values).is_some() {
            return Err(Error::format(path, &location, format!("duplicate token {token:?}")));
        }
    }
    Ok(EmbeddingProvider::Table(EmbeddingTable { vectors }))
}

/// Embeds the first `max_tokens` tokens and pads the rest.
pub fn embed<S: AsRef<str>>(
    tokens: &[S],
    config: &EmbeddingConfig,
    provider: &EmbeddingProvider,
) -> Result<EmbeddedSequence> {
    if config.dim != EMBEDDING_DIM {
        return Err(Error::invalid(format!("embedding dim is fixed at {EMBEDDING_DIM}")));
    }
    if config.max_tokens == 0 {
        return Err(Error::invalid("max_tokens must be positive"));
    }
    let mut values = Array2::from_elem((config.max_tokens, config.dim), config.pad_value);
    let true_length = tokens.len().min(config.max_tokens);
    for (i, token) in tokens.iter().take(true_length).enumerate() {
        let mut row = values.row_mut(i);
        provider.write_vector(
            token.as_ref(),
            row.as_slice_mut()
                .expect("rows of a standard-layout array are contiguous"),
        );
    }
    Ok(EmbeddedSequence { values, true_length })
}
