//! Property tests over the feature, split, metric, trainer and forest
//! invariants.

use dialog_sentiment::audio_features::{compute_deltas, featurize_samples, framing_plan, MfccConfig};
use dialog_sentiment::corpus::{generate_synthetic_corpus, GeneratorConfig};
use dialog_sentiment::fusion::{Forest, ForestConfig};
use dialog_sentiment::metrics::{report, ConfusionMatrix};
use dialog_sentiment::nets::{cross_entropy, Tensor};
use dialog_sentiment::splits::{assign_folds, fold_view};
use dialog_sentiment::text_features::{embed, tokenize, EmbeddingConfig, EmbeddingProvider, EMBEDDING_DIM};
use dialog_sentiment::trainer::{EarlyStopper, PlateauScheduler, SchedulerConfig, StopDecision};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(max_rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_rows).prop_flat_map(move |t| {
        prop::collection::vec(-100.0f64..100.0, t * cols)
            .prop_map(move |v| Array2::from_shape_vec((t, cols), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn framing_always_yields_300_frames(n in 300usize..=10_000_000) {
        let plan = framing_plan(n).unwrap();
        prop_assert_eq!(plan.window_length, (n as f64 / 225.25).ceil() as usize);
        prop_assert_eq!(plan.hop_length, (0.75 * plan.window_length as f64).round() as usize);
        prop_assert_eq!(plan.padded_length, plan.window_length + 299 * plan.hop_length);
        let mut frames = 0;
        let mut start = 0;
        while start + plan.window_length <= plan.padded_length {
            frames += 1;
            start += plan.hop_length;
        }
        prop_assert_eq!(frames, 300);
    }

    #[test]
    fn short_signals_are_rejected(n in 0usize..300) {
        prop_assert!(framing_plan(n).is_err());
    }

    #[test]
    fn deltas_are_linear(x in matrix(30, 4), seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let y = x.mapv(|v| (v * 1.7 + seed as f64 % 13.0).sin() * 50.0);
        let lhs = compute_deltas(&(&x * a + &y * b));
        let rhs = compute_deltas(&x) * a + compute_deltas(&y) * b;
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-9, "{} vs {}", l, r);
        }
    }

    #[test]
    fn deltas_of_constant_columns_vanish(t in 1usize..40, c in prop::collection::vec(-10.0f64..10.0, 1..6)) {
        let m = Array2::from_shape_fn((t, c.len()), |(_, j)| c[j]);
        prop_assert!(compute_deltas(&m).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn metric_identities_hold(counts in prop::array::uniform3(prop::array::uniform3(0u64..500)), bump in prop::array::uniform3(0usize..3)) {
        let mut cm = ConfusionMatrix { counts };
        for (row, &col) in bump.iter().enumerate() {
            cm.counts[row][col] += 1;
        }
        let r = report(&cm).unwrap();
        let recalls = r.recalls();
        prop_assert!((r.ua - recalls.iter().sum::<f64>() / 3.0).abs() <= 1e-12);
        prop_assert!((r.wa - cm.trace() as f64 / cm.total() as f64).abs() <= 1e-12);
        prop_assert!(recalls.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero(logits in prop::collection::vec(-20.0f64..20.0, 3..=30), label_seed in any::<u64>()) {
        let batch = logits.len() / 3;
        let data = logits[..batch * 3].to_vec();
        let labels: Vec<usize> = (0..batch).map(|i| ((label_seed >> (i % 32)) % 3) as usize).collect();
        let (loss, grad) = cross_entropy(&Tensor::new(vec![batch, 3], data).unwrap(), &labels).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        for i in 0..batch {
            prop_assert!(grad.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn lr_trace_only_halves_down_to_the_floor(values in prop::collection::vec(0.0f64..1.0, 1..300), patience in 0usize..6) {
        let cfg = SchedulerConfig { patience, min_lr: 1e-5, ..SchedulerConfig::default() };
        let mut s = PlateauScheduler::new(cfg.clone(), 1e-3);
        let mut prev = s.lr();
        for v in values {
            s.step(v);
            let lr = s.lr();
            prop_assert!(lr <= prev && lr >= cfg.min_lr);
            if lr != prev {
                prop_assert!(lr == prev * 0.5 || lr == cfg.min_lr);
            }
            prev = lr;
        }
    }

    #[test]
    fn early_stopper_best_epoch_is_first_maximum(values in prop::collection::vec(0.0f64..1.0, 1..60), patience in 1usize..8) {
        let mut e = EarlyStopper::new(patience, 0.0);
        let mut seen = Vec::new();
        for v in values {
            seen.push(v);
            if e.step(v) == StopDecision::Stop {
                break;
            }
        }
        let max = seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = seen.iter().position(|&v| v == max).unwrap() + 1;
        prop_assert_eq!(e.best_epoch(), first);
        prop_assert_eq!(e.best(), max);
    }

    #[test]
    fn embedding_shape_is_fixed(text in "[a-z ,.!\\[\\]]{0,120}", max_tokens in 1usize..20) {
        let cfg = EmbeddingConfig { max_tokens, ..Default::default() };
        let tokens = tokenize(&text);
        let seq = embed(&tokens, &cfg, &EmbeddingProvider::Hashed).unwrap();
        prop_assert_eq!(seq.values.dim(), (max_tokens, EMBEDDING_DIM));
        prop_assert_eq!(seq.true_length, tokens.len().min(max_tokens));
        prop_assert!(seq.values.rows().into_iter().skip(seq.true_length).all(|r| r.iter().all(|&v| v == 0.0)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn featurize_shape_survives_time_stretch(n in 300usize..40_000, seed in any::<u64>()) {
        let samples: Vec<f32> = (0..n).map(|i| (((i as u64).wrapping_mul(2654435761) ^ seed) % 2000) as f32 / 1000.0 - 1.0).collect();
        let doubled: Vec<f32> = samples.iter().chain(samples.iter()).copied().collect();
        let cfg = MfccConfig::default();
        let a = featurize_samples(&samples, 16_000, &cfg).unwrap();
        let b = featurize_samples(&doubled, 16_000, &cfg).unwrap();
        prop_assert_eq!(a.values.dim(), (300, 60));
        prop_assert_eq!(b.values.dim(), (300, 60));
        prop_assert!(a.values.iter().chain(b.values.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn folds_never_split_dialogs(seed in 0u64..10_000, dialogs in 12usize..60, k in 3usize..8) {
        let gen = GeneratorConfig {
            seed,
            num_dialogs: dialogs,
            utterances_per_dialog: [2, 9],
            sample_rate: 8000,
            duration_range: [0.04, 0.04],
            ..Default::default()
        };
        let corpus = generate_synthetic_corpus(&gen).unwrap();
        let folds = assign_folds(&corpus, k, seed).unwrap();
        prop_assert_eq!(&folds, &assign_folds(&corpus, k, seed).unwrap());
        prop_assert_eq!(folds.fold_of_dialog.len(), corpus.dialogs().len());
        prop_assert!(folds.fold_of_dialog.values().all(|&f| f < k));
        for test in 0..k {
            let view = fold_view(&corpus, &folds, test, (test + 1) % k).unwrap();
            prop_assert!(view.is_disjoint());
            let mut all: Vec<&String> = view.train_ids.iter().chain(&view.validation_ids).chain(&view.test_ids).collect();
            all.sort();
            let mut want: Vec<&String> = corpus.utterances().iter().filter(|u| u.label.is_some()).map(|u| &u.id).collect();
            want.sort();
            prop_assert_eq!(all, want);
            for id in &view.test_ids {
                let d = &corpus.get(id).unwrap().dialog_id;
                prop_assert_eq!(folds.fold_of_dialog[d], test);
            }
        }
    }

    #[test]
    fn forest_predictions_are_deterministic_labels(seed in any::<u64>(), n in 6usize..60) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![((i as u64 ^ seed) % 17) as f64, (i % 5) as f64, ((i * 7) % 3) as f64]).collect();
        let mut y: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % 3).collect();
        y[0] = 0;
        y[1] = 1;
        let cfg = ForestConfig { num_trees: 7, seed, ..Default::default() };
        let a = Forest::fit(&x, &y, &cfg).unwrap();
        let b = Forest::fit(&x, &y, &cfg).unwrap();
        for v in &x {
            let p = a.predict_index(v).unwrap();
            prop_assert!(p < 3);
            prop_assert_eq!(p, b.predict_index(v).unwrap());
        }
    }
}
