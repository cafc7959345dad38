//! Desk-scale stand-in corpus with class-conditioned audio and transcripts.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, SentimentLabel, Utterance};
use crate::error::{Error, Result};

/// Transcript marker inserted when a positive utterance carries a laugh burst.
pub const LAUGHTER_TOKEN: &str = "[laughter]";

/// SWITCHBOARD-sentiment class sizes after majority voting
/// (negative, positive, neutral).
const SWITCHBOARD_COUNTS: [f64; 3] = [8549.0, 15308.0, 25445.0];

const SNR_DB: f64 = 10.0;
const LAUGH_PROBABILITY: f64 = 0.5;
const LAUGH_SECONDS: f64 = 0.15;
const TRANSCRIPT_TOKENS: (usize, usize) = (3, 10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_dialogs: usize,
    /// Inclusive range of utterances per dialog.
    pub utterances_per_dialog: [usize; 2],
    /// Class proportions in label-code order (negative, positive, neutral).
    pub class_ratios: [f64; 3],
    pub sample_rate: u32,
    /// Inclusive range of utterance durations in seconds.
    pub duration_range: [f64; 2],
    pub vocab_size_per_class: usize,
    pub shared_filler_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let total: f64 = SWITCHBOARD_COUNTS.iter().sum();
        GeneratorConfig {
            seed: 7,
            num_dialogs: 200,
            utterances_per_dialog: [10, 10],
            class_ratios: SWITCHBOARD_COUNTS.map(|c| c / total),
            sample_rate: 16_000,
            duration_range: [0.75, 1.5],
            vocab_size_per_class: 40,
            shared_filler_fraction: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_ratios.iter().sum();
        if self.class_ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "class_ratios must be non-negative and sum to 1, got {:?} (sum {sum})",
                self.class_ratios
            )));
        }
        let [lo, hi] = self.utterances_per_dialog;
        if self.num_dialogs == 0 || lo == 0 || lo > hi {
            return Err(Error::invalid(format!(
                "need num_dialogs > 0 and 1 <= utterances_per_dialog[0] <= [1], got {} and {:?}",
                self.num_dialogs, self.utterances_per_dialog
            )));
        }
        if self.sample_rate == 0 || self.vocab_size_per_class == 0 {
            return Err(Error::invalid("sample_rate and vocab_size_per_class must be positive"));
        }
        let [dmin, dmax] = self.duration_range;
        if !(dmin > 0.0 && dmin <= dmax && dmax.is_finite()) {
            return Err(Error::invalid(format!("bad duration_range {:?}", self.duration_range)));
        }
        if (dmin * self.sample_rate as f64).round() < 300.0 {
            return Err(Error::invalid(
                "shortest duration yields fewer than 300 samples; featurization needs at least 300",
            ));
        }
        if !(0.0..=1.0).contains(&self.shared_filler_fraction) {
            return Err(Error::invalid("shared_filler_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Builds a corpus whose class sizes follow `class_ratios` to within one
/// utterance. Identical configs produce identical corpora.
pub fn generate_synthetic_corpus(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let [lo, hi] = config.utterances_per_dialog;
    let sizes: Vec<usize> = (0..config.num_dialogs).map(|_| rng.gen_range(lo..=hi)).collect();
    let total: usize = sizes.iter().sum();

    let mut labels = Vec::with_capacity(total);
    for (label, count) in SentimentLabel::ALL
        .into_iter()
        .zip(apportion(total, &config.class_ratios))
    {
        labels.extend(std::iter::repeat(label).take(count));
    }
    labels.shuffle(&mut rng);

    let vocab = Vocabulary::new(config.vocab_size_per_class);
    let mut utterances = Vec::with_capacity(total);
    let mut next = labels.into_iter();
    for (d, &size) in sizes.iter().enumerate() {
        let dialog_id = format!("dlg{d:04}");
        for u in 0..size {
            let label = next.next().expect("label count equals utterance count");
            let laugh = label == SentimentLabel::Positive && rng.gen_bool(LAUGH_PROBABILITY);
            let samples = synthesize_audio(&mut rng, config, label, laugh);
            let transcript = vocab.transcript(&mut rng, label, laugh, config.shared_filler_fraction);
            utterances.push(Utterance {
                id: format!("{dialog_id}_u{u:03}"),
                dialog_id: dialog_id.clone(),
                samples,
                sample_rate: config.sample_rate,
                transcript,
                votes: Vec::new(),
                label: Some(label),
            });
        }
    }
    Corpus::new(format!("synthetic-{}", config.seed), utterances)
}

/// Largest-remainder rounding of `ratios * total`.
fn apportion(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * total as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn fundamental_hz(label: SentimentLabel) -> f64 {
    match label {
        SentimentLabel::Negative => 120.0,
        SentimentLabel::Neutral => 220.0,
        SentimentLabel::Positive => 330.0,
    }
}

/// Harmonic tone at the class fundamental (with a little per-utterance
/// jitter), an optional laugh burst, then white noise at 10 dB SNR. Output is
/// quantized to the 16-bit grid so WAV storage is lossless.
fn synthesize_audio(rng: &mut ChaCha8Rng, config: &GeneratorConfig, label: SentimentLabel, laugh: bool) -> Vec<f32> {
    let sr = config.sample_rate as f64;
    let [dmin, dmax] = config.duration_range;
    let duration = if dmax > dmin { rng.gen_range(dmin..=dmax) } else { dmin };
    let n = ((duration * sr).round() as usize).max(300);

    let f0 = fundamental_hz(label) * rng.gen_range(0.92..1.08);
    let phases: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let fade = ((0.02 * sr) as usize).clamp(1, n / 4 + 1);
    let mut signal: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, phase)| {
                    let k = (h + 1) as f64;
                    (2.0 * PI * k * f0 * t + phase).sin() / k
                })
                .sum();
            let edge = i.min(n - 1 - i);
            let env = if edge < fade {
                0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos()
            } else {
                1.0
            };
            tone * env
        })
        .collect();

    if laugh {
        let rms = (signal.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        let len = ((LAUGH_SECONDS * sr) as usize).clamp(2, n / 3 + 2).min(n);
        let start = rng.gen_range(0..=n - len);
        for j in 0..len {
            let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / (len - 1) as f64).cos();
            let z: f64 = StandardNormal.sample(rng);
            signal[start + j] += 1.5 * rms * w * z;
        }
    }

    let power = signal.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let noise_std = (power / 10f64.powf(SNR_DB / 10.0)).sqrt();
    for x in signal.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *x += noise_std * z;
    }

    let peak = signal.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gain = if peak > 0.0 { 0.8 / peak } else { 0.0 };
    signal.iter().map(|x| quantize_pcm16(x * gain)).collect()
}

pub(crate) fn quantize_pcm16(x: f64) -> f32 {
    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0);
    (q / 32768.0) as f32
}

/// Pronounceable three-syllable words; slices `[c*V, (c+1)*V)` belong to
/// class `c` and slice 3 is the shared filler vocabulary.
struct Vocabulary {
    per_class: usize,
}

impl Vocabulary {
    fn new(per_class: usize) -> Self {
        Vocabulary { per_class }
    }

    fn word(index: usize) -> String {
        const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
        const VOWELS: &[u8] = b"aeiou";
        let syllables = CONSONANTS.len() * VOWELS.len();
        let mut word = String::with_capacity(6);
        let mut rest = index;
        for _ in 0..3 {
            let s = rest % syllables;
            rest /= syllables;
            word.push(CONSONANTS[s / VOWELS.len()] as char);
            word.push(VOWELS[s % VOWELS.len()] as char);
        }
        if rest > 0 {
            word.push_str(&rest.to_string());
        }
        word
    }

    fn transcript(
        &self,
        rng: &mut ChaCha8Rng,
        label: SentimentLabel,
        laugh: bool,
        filler_fraction: f64,
    ) -> Vec<String> {
        let len = rng.gen_range(TRANSCRIPT_TOKENS.0..=TRANSCRIPT_TOKENS.1);
        let mut tokens = Vec::with_capacity(len + 1);
        if laugh {
            tokens.push(LAUGHTER_TOKEN.to_string());
        }
        for _ in 0..len {
            let slice = if rng.gen_bool(filler_fraction) {
                3
            } else {
                label.index()
            };
            let offset = rng.gen_range(0..self.per_class);
            tokens.push(Self::word(slice * self.per_class + offset));
        }
        tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            num_dialogs: 20,
            utterances_per_dialog: [3, 7],
            duration_range: [0.3, 0.5],
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn counts_follow_ratios() {
        let cfg = GeneratorConfig {
            duration_range: [0.05, 0.05],
            ..GeneratorConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg).unwrap();
        let total = corpus.len() as f64;
        assert_eq!(corpus.len(), 2000);
        for label in SentimentLabel::ALL {
            let expected = cfg.class_ratios[label.index()] * total;
            let got = corpus.class_counts().get(label) as f64;
            assert!((got - expected).abs() <= 1.0, "{label}: {got} vs {expected}");
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_corpus(&small(3)).unwrap();
        let b = generate_synthetic_corpus(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_ratio() {
        let cfg = GeneratorConfig {
            class_ratios: [1.0, 0.0, 0.0],
            ..small(1)
        };
        let corpus = generate_synthetic_corpus(&cfg).unwrap();
        assert!(corpus
            .utterances()
            .iter()
            .all(|u| u.label == Some(SentimentLabel::Negative)));
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            GeneratorConfig {
                class_ratios: [0.5, 0.5, 0.5],
                ..small(1)
            },
            GeneratorConfig {
                class_ratios: [1.2, -0.2, 0.0],
                ..small(1)
            },
            GeneratorConfig {
                num_dialogs: 0,
                ..small(1)
            },
            GeneratorConfig {
                utterances_per_dialog: [4, 2],
                ..small(1)
            },
            GeneratorConfig {
                duration_range: [0.001, 0.01],
                ..small(1)
            },
            GeneratorConfig {
                shared_filler_fraction: 1.5,
                ..small(1)
            },
        ] {
            assert!(generate_synthetic_corpus(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn vocabulary_slices_are_disjoint() {
        let words: std::collections::HashSet<String> = (0..4 * 500).map(Vocabulary::word).collect();
        assert_eq!(words.len(), 2000);
    }

    #[test]
    fn samples_on_pcm16_grid() {
        let corpus = generate_synthetic_corpus(&small(9)).unwrap();
        for u in corpus.utterances() {
            assert!(u.samples.len() >= 300);
            for &s in &u.samples {
                assert!((-1.0..=1.0).contains(&s));
                let q = s as f64 * 32768.0;
                assert_eq!(q, q.round());
            }
        }
    }

    #[test]
    fn laughter_only_in_positive() {
        let corpus = generate_synthetic_corpus(&small(11)).unwrap();
        for u in corpus.utterances() {
            if u.transcript.iter().any(|t| t == LAUGHTER_TOKEN) {
                assert_eq!(u.label, Some(SentimentLabel::Positive));
            }
        }
    }

    /// Autocorrelation pitch estimate, independent of the generator's own
    /// parameters, must order the classes negative < neutral < positive.
    #[test]
    fn fundamental_ordering() {
        let cfg = GeneratorConfig {
            num_dialogs: 30,
            utterances_per_dialog: [4, 4],
            duration_range: [0.25, 0.25],
            ..GeneratorConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg).unwrap();
        let mut sums = [0.0f64; 3];
        let mut n = [0usize; 3];
        for u in corpus.utterances() {
            let f0 = autocorrelation_pitch(&u.samples, u.sample_rate as f64, 80.0, 500.0);
            let i = u.label.unwrap().index();
            sums[i] += f0;
            n[i] += 1;
        }
        let mean = |i: usize| sums[i] / n[i] as f64;
        let (neg, pos, neu) = (mean(0), mean(1), mean(2));
        assert!(neg < neu && neu < pos, "{neg} {neu} {pos}");
    }

    fn autocorrelation_pitch(x: &[f32], sr: f64, fmin: f64, fmax: f64) -> f64 {
        let min_lag = (sr / fmax) as usize;
        let max_lag = (sr / fmin) as usize;
        let r: Vec<f64> = (min_lag..=max_lag)
            .map(|lag| {
                x.iter().zip(&x[lag..]).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() / (x.len() - lag) as f64
            })
            .collect();
        let peak = r.iter().cloned().fold(f64::MIN, f64::max);
        // Shortest lag close to the global maximum, so period multiples lose.
        let lag = (1..r.len() - 1)
            .find(|&i| r[i] >= 0.9 * peak && r[i] >= r[i - 1] && r[i] >= r[i + 1])
            .unwrap_or(0)
            + min_lag;
        sr / lag as f64
    }
}
