//! Utterance and dialog data model, annotator-vote resolution, the IEMOCAP
//! three-class remap, manifest I/O and a deterministic synthetic corpus.

mod manifest;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{load_manifest, save_manifest};
pub use synthetic::{generate_synthetic_corpus, GeneratorConfig, LAUGHTER_TOKEN};

/// Three-way sentiment label. The integer codes are part of every on-disk
/// format and never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative = 0,
    Positive = 1,
    Neutral = 2,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Positive,
        SentimentLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {index} is outside 0..3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Positive => "positive",
            SentimentLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(SentimentLabel::Negative),
            "positive" => Ok(SentimentLabel::Positive),
            "neutral" => Ok(SentimentLabel::Neutral),
            _ => Err(Error::invalid(format!("unknown sentiment label {s:?}"))),
        }
    }
}

/// Per-class tallies indexed by [`SentimentLabel::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; 3]);

impl ClassCounts {
    pub fn get(&self, label: SentimentLabel) -> usize {
        self.0[label.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// One dialog turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub dialog_id: String,
    /// Mono samples in [-1, 1].
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub transcript: Vec<String>,
    /// Raw annotator votes; empty when the label was assigned directly.
    pub votes: Vec<String>,
    pub label: Option<SentimentLabel>,
}

/// An immutable collection of utterances with cached class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    utterances: Vec<Utterance>,
    class_counts: ClassCounts,
}

impl Corpus {
    /// Validates ids and recounts labels.
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(utterances.len());
        for u in &utterances {
            if u.dialog_id.is_empty() {
                return Err(Error::invalid(format!("utterance {} has an empty dialog id", u.id)));
            }
            if u.sample_rate == 0 {
                return Err(Error::invalid(format!("utterance {} has sample rate 0", u.id)));
            }
            if !seen.insert(u.id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id {}", u.id)));
            }
        }
        let class_counts = count_labels(&utterances);
        Ok(Corpus {
            name: name.into(),
            utterances,
            class_counts,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn class_counts(&self) -> ClassCounts {
        self.class_counts
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Keeps only utterances for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&Utterance) -> bool) -> Corpus {
        let utterances: Vec<Utterance> = self.utterances.iter().filter(|u| keep(u)).cloned().collect();
        let class_counts = count_labels(&utterances);
        Corpus {
            name: self.name.clone(),
            utterances,
            class_counts,
        }
    }

    /// Labeled utterances grouped by dialog, dialogs in lexicographic order.
    pub fn dialogs(&self) -> BTreeMap<&str, Vec<&Utterance>> {
        let mut map: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
        for u in &self.utterances {
            map.entry(u.dialog_id.as_str()).or_default().push(u);
        }
        map
    }
}

fn count_labels(utterances: &[Utterance]) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for label in utterances.iter().filter_map(|u| u.label) {
        counts.0[label.index()] += 1;
    }
    counts
}

/// Returns the label with a strict majority of the votes, or `None` when no
/// label has more than half of them. Votes are matched case-insensitively.
pub fn resolve_majority_label<S: AsRef<str>>(votes: &[S]) -> Result<Option<SentimentLabel>> {
    if votes.is_empty() {
        return Err(Error::invalid("no annotator votes"));
    }
    let mut counts = [0usize; 3];
    for vote in votes {
        let label: SentimentLabel = vote
            .as_ref()
            .parse()
            .map_err(|_| Error::invalid(format!("unknown vote {:?}", vote.as_ref())))?;
        counts[label.index()] += 1;
    }
    Ok(SentimentLabel::ALL
        .into_iter()
        .find(|l| 2 * counts[l.index()] > votes.len()))
}

/// IEMOCAP emotion tag to three-class sentiment. Tags outside the mapping
/// (frustrated, surprised, ...) drop out of the three-class set.
pub fn map_iemocap_label(raw_emotion: &str) -> Option<SentimentLabel> {
    match raw_emotion.trim().to_ascii_lowercase().as_str() {
        "happy" | "hap" | "excited" | "exc" => Some(SentimentLabel::Positive),
        "angry" | "ang" | "sad" => Some(SentimentLabel::Negative),
        "neutral" | "neu" => Some(SentimentLabel::Neutral),
        _ => None,
    }
}

/// Bracketed transcript markers such as `[laughter]` or `[breathing]`.
pub fn is_nonverbal_token(token: &str) -> bool {
    token.len() >= 2 && token.starts_with('[') && token.ends_with(']')
}

/// Keep an utterance only if its transcript has at least one verbal token.
/// Empty transcripts are dropped.
pub fn filter_nonverbal(utterance: &Utterance) -> bool {
    utterance.transcript.iter().any(|t| !is_nonverbal_token(t))
}
