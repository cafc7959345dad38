//! Dialog-grouped stratified k-fold assignment.
//!
//! Dialogs are placed greedily, largest first, into the fold whose per-class
//! counts (and total size) move least away from an even share. All
//! utterances of a dialog land in the same fold.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_dialog: BTreeMap<String, usize>,
}

/// Utterance ids in corpus order; only labeled utterances are included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldView {
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

pub fn assign_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    // Per-dialog labeled counts; dialogs with no labeled utterance still get a fold.
    let mut per_dialog: BTreeMap<&str, [i64; 3]> = BTreeMap::new();
    for u in corpus.utterances() {
        let counts = per_dialog.entry(u.dialog_id.as_str()).or_default();
        if let Some(label) = u.label {
            counts[label.index()] += 1;
        }
    }
    let labeled_dialogs = per_dialog.values().filter(|c| c.iter().sum::<i64>() > 0).count();
    if labeled_dialogs < k {
        return Err(Error::invalid(format!(
            "{labeled_dialogs} dialogs with labeled utterances cannot fill {k} folds"
        )));
    }

    let mut order: Vec<(&str, [i64; 3])> = per_dialog.into_iter().collect();
    // BTreeMap order already breaks ties by dialog id; the sort is stable.
    order.sort_by_key(|(_, c)| std::cmp::Reverse(c.iter().sum::<i64>()));

    let kk = k as i64;
    let mut totals = [0i64; 3];
    for (_, c) in &order {
        for i in 0..3 {
            totals[i] += c[i];
        }
    }
    let grand: i64 = totals.iter().sum();

    // Costs are scaled by k^2 so every quantity is an exact integer and ties
    // are exact: deviation of fold count n from target t/k becomes (k n - t).
    let mut fold_counts = vec![[0i64; 3]; k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_dialog = BTreeMap::new();
    let sq = |x: i64| x * x;
    for (dialog, c) in order {
        let size: i64 = c.iter().sum();
        let delta = |f: &[i64; 3]| -> i64 {
            let class_term: i64 = (0..3)
                .map(|i| sq(kk * (f[i] + c[i]) - totals[i]) - sq(kk * f[i] - totals[i]))
                .sum();
            let n: i64 = f.iter().sum();
            class_term + sq(kk * (n + size) - grand) - sq(kk * n - grand)
        };
        let costs: Vec<i64> = fold_counts.iter().map(delta).collect();
        let best = *costs.iter().min().expect("k >= 2");
        let tied: Vec<usize> = (0..k).filter(|&f| costs[f] == best).collect();
        let fold = *tied.choose(&mut rng).expect("at least one fold attains the minimum");
        for i in 0..3 {
            fold_counts[fold][i] += c[i];
        }
        fold_of_dialog.insert(dialog.to_string(), fold);
    }
    Ok(FoldAssignment { k, fold_of_dialog })
}

impl FoldAssignment {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("serializable");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: FoldAssignment = serde_json::from_str(&text).map_err(|e| Error::format(path, "json", e.to_string()))?;
        if let Some((d, f)) = a.fold_of_dialog.iter().find(|(_, &f)| f >= a.k) {
            return Err(Error::format(path, d, format!("fold {f} out of range for k={}", a.k)));
        }
        Ok(a)
    }

    /// Per-fold class counts over labeled utterances.
    pub fn fold_class_counts(&self, corpus: &Corpus) -> Vec<[usize; 3]> {
        let mut counts = vec![[0usize; 3]; self.k];
        for u in corpus.utterances() {
            if let (Some(label), Some(&f)) = (u.label, self.fold_of_dialog.get(&u.dialog_id)) {
                counts[f][label.index()] += 1;
            }
        }
        counts
    }

    /// Largest absolute gap between a fold's class proportion and the global one.
    pub fn max_proportion_deviation(&self, corpus: &Corpus) -> f64 {
        let global = corpus.class_counts();
        let total = global.total() as f64;
        self.fold_class_counts(corpus)
            .iter()
            .flat_map(|c| {
                let n: usize = c.iter().sum();
                (0..3).map(move |i| {
                    if n == 0 {
                        0.0
                    } else {
                        (c[i] as f64 / n as f64 - global.0[i] as f64 / total).abs()
                    }
                })
            })
            .fold(0.0, f64::max)
    }
}

pub fn fold_view(
    corpus: &Corpus,
    assignment: &FoldAssignment,
    test_fold: usize,
    validation_fold: usize,
) -> Result<FoldView> {
    let k = assignment.k;
    if test_fold >= k || validation_fold >= k || test_fold == validation_fold {
        return Err(Error::invalid(format!(
            "test fold {test_fold} and validation fold {validation_fold} must differ and lie in 0..{k}"
        )));
    }
    let mut view = FoldView {
        train_ids: Vec::new(),
        validation_ids: Vec::new(),
        test_ids: Vec::new(),
    };
    for u in corpus.utterances().iter().filter(|u| u.label.is_some()) {
        let fold = *assignment
            .fold_of_dialog
            .get(&u.dialog_id)
            .ok_or_else(|| Error::invalid(format!("dialog {} has no fold assignment", u.dialog_id)))?;
        let bucket = if fold == test_fold {
            &mut view.test_ids
        } else if fold == validation_fold {
            &mut view.validation_ids
        } else {
            &mut view.train_ids
        };
        bucket.push(u.id.clone());
    }
    Ok(view)
}

impl FoldView {
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train_ids
            .iter()
            .chain(&self.validation_ids)
            .chain(&self.test_ids)
            .all(|id| seen.insert(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, GeneratorConfig, SentimentLabel, Utterance};

    fn corpus_of(dialogs: &[&[SentimentLabel]]) -> Corpus {
        let mut utterances = Vec::new();
        for (d, labels) in dialogs.iter().enumerate() {
            for (i, &label) in labels.iter().enumerate() {
                utterances.push(Utterance {
                    id: format!("d{d:03}_{i}"),
                    dialog_id: format!("d{d:03}"),
                    samples: vec![],
                    sample_rate: 16000,
                    transcript: vec![],
                    votes: vec![],
                    label: Some(label),
                });
            }
        }
        Corpus::new("t", utterances).unwrap()
    }

    #[test]
    fn equal_dialogs_fill_folds_evenly() {
        use SentimentLabel::*;
        let pattern = [
            [Negative, Positive],
            [Neutral, Neutral],
            [Positive, Neutral],
            [Negative, Negative],
        ];
        let dialogs: Vec<&[SentimentLabel]> = (0..20).map(|i| &pattern[i % 4][..]).collect();
        let corpus = corpus_of(&dialogs);
        for seed in 0..5 {
            let a = assign_folds(&corpus, 10, seed).unwrap();
            let mut per_fold = [0usize; 10];
            for &f in a.fold_of_dialog.values() {
                per_fold[f] += 1;
            }
            assert_eq!(per_fold, [2; 10], "seed {seed}");
        }
    }

    #[test]
    fn too_few_dialogs() {
        use SentimentLabel::*;
        let corpus = corpus_of(&[&[Negative], &[Positive]]);
        assert!(assign_folds(&corpus, 3, 0).is_err());
    }

    fn synthetic() -> Corpus {
        generate_synthetic_corpus(&GeneratorConfig {
            duration_range: [0.02, 0.02],
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn stratification_bound_on_default_corpus() {
        let corpus = synthetic();
        let a = assign_folds(&corpus, 10, 7).unwrap();
        assert_eq!(a.fold_of_dialog.len(), 200);
        let dev = a.max_proportion_deviation(&corpus);
        assert!(dev <= 0.05, "max deviation {dev}");
        assert_eq!(a, assign_folds(&corpus, 10, 7).unwrap());
    }

    #[test]
    fn views_partition_labeled_ids() {
        let corpus = synthetic();
        let a = assign_folds(&corpus, 10, 1).unwrap();
        let v = fold_view(&corpus, &a, 0, 1).unwrap();
        assert!(v.is_disjoint());
        assert_eq!(
            v.train_ids.len() + v.validation_ids.len() + v.test_ids.len(),
            corpus.len()
        );
        for id in &v.train_ids {
            let d = &corpus.get(id).unwrap().dialog_id;
            assert!(a.fold_of_dialog[d] >= 2);
        }
        assert!(fold_view(&corpus, &a, 0, 0).is_err());
        assert!(fold_view(&corpus, &a, 10, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let corpus = synthetic();
        let a = assign_folds(&corpus, 5, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.json");
        a.save(&path).unwrap();
        assert_eq!(FoldAssignment::load(&path).unwrap(), a);
    }
}
