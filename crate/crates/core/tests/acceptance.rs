//! Acceptance gate. Prints one `PASS` or `FAIL` line per criterion and exits
//! non-zero if any criterion fails. Set `ACCEPTANCE_ONLY=<name>` to run a
//! subset (comma separated).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dialog_sentiment::audio_features::{compute_deltas, featurize_samples, framing_plan, MfccConfig};
use dialog_sentiment::corpus::{generate_synthetic_corpus, GeneratorConfig};
use dialog_sentiment::experiment::{run_pipeline, CorpusSource, ExperimentConfig, Modality, Report};
use dialog_sentiment::metrics::{report, ConfusionMatrix, Metric};
use dialog_sentiment::nets::{
    build_acoustic, build_text, cross_entropy, AcousticModelSpec, ConvBlockSpec, Mode, ModelGraph, Tensor,
    TextModelSpec,
};
use dialog_sentiment::splits::{assign_folds, fold_view};
use dialog_sentiment::text_features::EMBEDDING_DIM;
use dialog_sentiment::trainer::{EarlyStopper, PlateauScheduler, SchedulerConfig, StopDecision};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn shape_contract() -> Outcome {
    let start = Instant::now();
    let cfg = MfccConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let rate: u32 = if i % 2 == 0 { 8000 } else { 16_000 };
        let seconds = rng.gen_range(0.1..=30.0);
        let n = (seconds * rate as f64).round() as usize;
        let samples: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let fm = featurize_samples(&samples, rate, &cfg).map_err(|e| format!("{n} samples: {e}"))?;
        ensure(
            fm.values.dim() == (300, 60),
            format!("{n} samples: shape {:?}", fm.values.dim()),
        )?;
        let hop = (0.75 * fm.window_length as f64).round() as usize;
        ensure(
            fm.hop_length == hop,
            format!("{n} samples: hop {} != {hop}", fm.hop_length),
        )?;
        let plan = framing_plan(n).map_err(|e| e.to_string())?;
        let sliced = (0..)
            .map(|f| f * plan.hop_length)
            .take_while(|s| s + plan.window_length <= plan.padded_length)
            .count();
        ensure(sliced == 300, format!("{n} samples: slicer finds {sliced} frames"))?;
        ensure(
            fm.values.iter().all(|v| v.is_finite()),
            format!("{n} samples: non-finite value"),
        )?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:.1?}"))?;
    Ok(format!("1000 lengths in {elapsed:.1?}"))
}

/// Direct evaluation of the radius-2 regression formula with edge replication.
fn brute_deltas(m: &Array2<f64>) -> Array2<f64> {
    let (t, d) = m.dim();
    let at = |i: isize, j: usize| m[[i.clamp(0, t as isize - 1) as usize, j]];
    Array2::from_shape_fn((t, d), |(i, j)| {
        let i = i as isize;
        let num: f64 = (1..=2).map(|n| n as f64 * (at(i + n, j) - at(i - n, j))).sum();
        num / 10.0
    })
}

fn delta_oracle() -> Outcome {
    let ramp = Array2::from_shape_vec((5, 1), vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let d = compute_deltas(&ramp);
    ensure(d[[2, 0]] == 1.0, format!("interior delta {}", d[[2, 0]]))?;
    ensure(d[[0, 0]] == 0.5, format!("edge delta {}", d[[0, 0]]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    for _ in 0..100 {
        let t = rng.gen_range(1..=40);
        let c = rng.gen_range(1..=8);
        let m = Array2::from_shape_fn((t, c), |_| rng.gen_range(-10.0..10.0));
        let got = compute_deltas(&m);
        let want = brute_deltas(&m);
        worst = got
            .iter()
            .zip(want.iter())
            .fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("ramp exact, 100 random matrices max deviation {worst:e}"))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    for _ in 0..10_000 {
        let mut cm = ConfusionMatrix::new();
        for row in cm.counts.iter_mut() {
            for c in row.iter_mut() {
                *c = rng.gen_range(0..200);
            }
            row[rng.gen_range(0..3)] += 1;
        }
        let r = report(&cm).map_err(|e| e.to_string())?;
        let recalls: Vec<f64> = (0..3)
            .map(|i| cm.counts[i][i] as f64 / cm.counts[i].iter().sum::<u64>() as f64)
            .collect();
        let ua = recalls.iter().sum::<f64>() / 3.0;
        let total: u64 = cm.counts.iter().flatten().sum();
        let wa = (0..3).map(|i| cm.counts[i][i]).sum::<u64>() as f64 / total as f64;
        worst = worst.max((r.ua - ua).abs()).max((r.wa - wa).abs());
    }
    ensure(worst <= 1e-12, format!("identity deviation {worst:e}"))?;

    // Majority predictor on the reference label counts, shuffled.
    let counts = [8549usize, 15308, 25445];
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
        .collect();
    ensure(labels.len() == 49_302, "label set size")?;
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.gen_range(0..=i));
    }
    let cm = ConfusionMatrix::from_pairs(labels.iter().map(|&t| (t, 2))).map_err(|e| e.to_string())?;
    let r = report(&cm).map_err(|e| e.to_string())?;
    ensure((r.wa - 0.516).abs() <= 0.001, format!("majority wa {}", r.wa))?;
    ensure((r.ua - 1.0 / 3.0).abs() <= 1e-9, format!("majority ua {}", r.ua))?;
    Ok(format!(
        "10000 matrices deviation {worst:e}; majority wa {:.4} ua {:.10}",
        r.wa, r.ua
    ))
}

fn fold_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f64;
    for i in 0..50u64 {
        let gen = GeneratorConfig {
            seed: 1000 + i,
            num_dialogs: rng.gen_range(150..=300),
            utterances_per_dialog: [rng.gen_range(6..=10), rng.gen_range(10..=14)],
            sample_rate: 8000,
            duration_range: [0.04, 0.05],
            ..Default::default()
        };
        let corpus = generate_synthetic_corpus(&gen).map_err(|e| e.to_string())?;
        let k = 10;
        let folds = assign_folds(&corpus, k, i).map_err(|e| e.to_string())?;
        let dialog_of = |id: &str| corpus.get(id).map(|u| u.dialog_id.clone()).unwrap();
        for test in 0..k {
            let view = fold_view(&corpus, &folds, test, (test + 1) % k).map_err(|e| e.to_string())?;
            let sets: Vec<std::collections::BTreeSet<String>> = [&view.train_ids, &view.validation_ids, &view.test_ids]
                .iter()
                .map(|ids| ids.iter().map(|id| dialog_of(id)).collect())
                .collect();
            for a in 0..3 {
                for b in a + 1..3 {
                    ensure(
                        sets[a].is_disjoint(&sets[b]),
                        format!("corpus {i}: a dialog spans two sets"),
                    )?;
                }
            }
            let n = view.train_ids.len() + view.validation_ids.len() + view.test_ids.len();
            ensure(
                n == corpus.class_counts().total(),
                format!("corpus {i}: views do not partition"),
            )?;
        }
        worst = worst.max(folds.max_proportion_deviation(&corpus));
    }
    ensure(worst <= 0.05, format!("max proportion deviation {worst:.4}"))?;
    Ok(format!("50 corpora, max proportion deviation {worst:.4}"))
}

fn scheduler_stopper() -> Outcome {
    let cfg = SchedulerConfig::default();
    let mut s = PlateauScheduler::new(cfg.clone(), 1e-3);
    let trace = [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6];
    let drops: Vec<usize> = trace
        .iter()
        .enumerate()
        .filter(|(_, &v)| s.step(v))
        .map(|(i, _)| i + 1)
        .collect();
    ensure(drops == vec![8], format!("drops at {drops:?}"))?;
    ensure(s.lr() == 5e-4, format!("lr {}", s.lr()))?;

    let mut s = PlateauScheduler::new(cfg.clone(), 1e-3);
    ensure(
        (0..50).all(|i| !s.step(i as f64 * 0.01)),
        "increasing values dropped the lr",
    )?;

    // Long plateau: non-increasing, exact halvings, floored at min_lr.
    let mut s = PlateauScheduler::new(cfg.clone(), 1e-3);
    let mut lrs = vec![s.lr()];
    for _ in 0..200 {
        s.step(0.3);
        lrs.push(s.lr());
    }
    for w in lrs.windows(2) {
        let ok = w[1] == w[0] || w[1] == w[0] * 0.5 || (w[1] == cfg.min_lr && w[0] * 0.5 < cfg.min_lr);
        ensure(ok && w[1] <= w[0], format!("lr step {} -> {}", w[0], w[1]))?;
    }
    ensure(*lrs.last().unwrap() == cfg.min_lr, "lr did not reach the floor")?;

    let stop_at = |values: &[f64], patience: usize| {
        let mut e = EarlyStopper::new(patience, 1e-4);
        values
            .iter()
            .position(|&v| e.step(v) == StopDecision::Stop)
            .map(|i| (i + 1, e.best_epoch()))
    };
    let a = stop_at(&[0.50, 0.55, 0.54, 0.53, 0.52], 3);
    ensure(a == Some((5, 2)), format!("dipping trace {a:?}"))?;
    let b = stop_at(&[0.4; 10], 3);
    ensure(b == Some((4, 1)), format!("constant trace {b:?}"))?;
    let c = stop_at(&(0..100).map(|i| i as f64 * 0.01).collect::<Vec<_>>(), 3);
    ensure(c.is_none(), format!("improving trace {c:?}"))?;
    Ok("halving after value 8, floor at min_lr, stops (5, best 2) and (4, best 1)".into())
}

/// Worst relative error of analytic against central-difference gradients over
/// every trainable entry.
fn grad_check(g: &mut ModelGraph, x: &Tensor, labels: &[usize]) -> (f64, usize) {
    let loss_at = |g: &mut ModelGraph| {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = g.forward(x, Mode::Train, &mut rng).unwrap();
        cross_entropy(&out.logits, labels).unwrap()
    };
    g.zero_grads();
    let (_, dlogits) = loss_at(g);
    g.backward(&dlogits);
    let analytic: Vec<Vec<f64>> = g.params().iter().map(|p| p.grad.clone()).collect();
    let h = 1e-4;
    let mut worst = 0f64;
    let mut checked = 0;
    for pi in 0..analytic.len() {
        if !g.params()[pi].trainable {
            continue;
        }
        for j in 0..analytic[pi].len() {
            let orig = g.params()[pi].value[j];
            g.params_mut()[pi].value[j] = orig + h;
            let up = loss_at(g).0;
            g.params_mut()[pi].value[j] = orig - h;
            let down = loss_at(g).0;
            g.params_mut()[pi].value[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7));
            checked += 1;
        }
    }
    (worst, checked)
}

fn random_tensor(shape: Vec<usize>, seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let spec = AcousticModelSpec::custom(vec![ConvBlockSpec::new(4, [0, 2])], vec![8]);
    let mut acoustic = build_acoustic(&spec, (12, 6, 1), 3).map_err(|e| e.to_string())?;
    let (wa, na) = grad_check(&mut acoustic, &random_tensor(vec![3, 1, 12, 6], 9, 1.0), &[0, 2, 1]);
    let mut text = build_text(&TextModelSpec::default(), (8, EMBEDDING_DIM), 5).map_err(|e| e.to_string())?;
    let (wt, nt) = grad_check(&mut text, &random_tensor(vec![2, 8, EMBEDDING_DIM], 10, 0.5), &[1, 0]);
    let elapsed = start.elapsed();
    ensure(wa <= 1e-3, format!("acoustic relative error {wa:e}"))?;
    ensure(wt <= 1e-3, format!("text relative error {wt:e}"))?;
    ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "acoustic {na} entries max rel {wa:.2e}; text {nt} entries max rel {wt:.2e}; {elapsed:.1?}"
    ))
}

fn ua_of(report: &Report, modality: Modality, monitor: Metric) -> Result<f64, String> {
    report
        .table(modality)
        .and_then(|t| t.rows.iter().find(|r| r.monitor == monitor))
        .and_then(|r| r.metrics.as_ref())
        .map(|m| m.ua)
        .ok_or_else(|| format!("no {modality} {monitor:?} result"))
}

fn e2e_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        corpus: CorpusSource::Synthetic(GeneratorConfig::default()),
        k_folds: 3,
        monitors: vec![Metric::Ua],
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

/// The end-to-end report is shared by the toy-learning and fusion criteria.
struct Shared {
    e2e: Option<Result<(Report, Duration), String>>,
}

fn e2e_report(shared: &mut Shared) -> Result<(Report, Duration), String> {
    shared
        .e2e
        .get_or_insert_with(|| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let start = Instant::now();
            let report = run_pipeline(e2e_config(dir.path()), false).map_err(|e| e.to_string())?;
            Ok((report, start.elapsed()))
        })
        .clone()
}

fn end_to_end(shared: &mut Shared) -> Outcome {
    let (report, elapsed) = e2e_report(shared)?;
    let text = ua_of(&report, Modality::Text, Metric::Ua)?;
    let acoustic = ua_of(&report, Modality::Acoustic, Metric::Ua)?;
    let fused = ua_of(&report, Modality::Bimodal, Metric::Ua)?;
    let detail = format!("text UA {text:.4}, acoustic UA {acoustic:.4}, fused UA {fused:.4}, 3 folds in {elapsed:.0?}");
    ensure(text >= 0.85, format!("{detail}: text below 0.85"))?;
    ensure(acoustic >= 0.60, format!("{detail}: acoustic below 0.60"))?;
    ensure(
        fused >= text.max(acoustic) - 0.02,
        format!("{detail}: fused below best modality - 0.02"),
    )?;
    ensure(
        elapsed < Duration::from_secs(30 * 60),
        format!("{detail}: over 30 minutes"),
    )?;
    Ok(detail)
}

fn fusion_matches(shared: &mut Shared) -> Outcome {
    let (report, _) = e2e_report(shared)?;
    let fused = ua_of(&report, Modality::Bimodal, Metric::Ua)?;
    let mut parts = Vec::new();
    for m in [Modality::Acoustic, Modality::Text] {
        let ua = ua_of(&report, m, Metric::Ua)?;
        ensure(
            fused >= ua - 0.02,
            format!("fused UA {fused:.4} < {m} UA {ua:.4} - 0.02"),
        )?;
        parts.push(format!("{m} {ua:.4}"));
    }
    Ok(format!("fused UA {fused:.4} vs {} (monitor UA)", parts.join(", ")))
}

fn directional_ablation() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let gen = GeneratorConfig {
            seed: 100 + seed,
            num_dialogs: 90,
            class_ratios: [0.10, 0.30, 0.60],
            ..Default::default()
        };
        let cfg = ExperimentConfig {
            corpus: CorpusSource::Synthetic(gen),
            k_folds: 3,
            test_folds: Some(vec![0]),
            monitors: vec![Metric::Wa, Metric::NegRecall],
            modality: Modality::Acoustic,
            output_dir: dir.path().to_path_buf(),
            seed,
            ..Default::default()
        };
        let exp = dialog_sentiment::experiment::Experiment::open(cfg, false).map_err(|e| e.to_string())?;
        let runs = exp
            .train_modality(Modality::Acoustic, false)
            .map_err(|e| e.to_string())?;
        let neg = |m: Metric| runs.iter().find(|r| r.monitor == m).map(|r| r.test.neg_recall).unwrap();
        let (wa, nr) = (neg(Metric::Wa), neg(Metric::NegRecall));
        if nr >= wa {
            wins += 1;
        }
        pairs.push(format!("{wa:.3}->{nr:.3}"));
    }
    let detail = format!("neg recall WA->NegRecall monitor [{}], {wins}/5 seeds", pairs.join(" "));
    ensure(wins >= 4, detail.clone())?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let gen = GeneratorConfig {
        num_dialogs: 40,
        duration_range: [0.5, 0.8],
        ..Default::default()
    };
    let run = || -> Result<(String, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = ExperimentConfig {
            corpus: CorpusSource::Synthetic(gen.clone()),
            k_folds: 3,
            monitors: vec![Metric::Ua, Metric::NegRecall],
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        cfg.acoustic_training.max_epochs = 6;
        cfg.text_training.max_epochs = 6;
        let report = run_pipeline(cfg, false).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(dir.path().join("report.json")).map_err(|e| e.to_string())?;
        Ok((report.to_json_string(), bytes))
    };
    let (a, fa) = run()?;
    let (b, fb) = run()?;
    ensure(a == b, "report JSON differs between runs")?;
    ensure(fa == fb, "report.json files differ between runs")?;
    Ok(format!(
        "two full pipeline runs, report.json identical ({} bytes)",
        fa.len()
    ))
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|p| p.trim().to_string()).collect());
    let mut shared = Shared { e2e: None };
    let criteria: Vec<(&str, Box<dyn FnMut(&mut Shared) -> Outcome>)> = vec![
        ("shape_contract", Box::new(|_| shape_contract())),
        ("delta_oracle", Box::new(|_| delta_oracle())),
        ("metric_identities", Box::new(|_| metric_identities())),
        ("fold_integrity", Box::new(|_| fold_integrity())),
        ("scheduler_stopper", Box::new(|_| scheduler_stopper())),
        ("gradient_check", Box::new(|_| gradient_check())),
        ("end_to_end", Box::new(end_to_end)),
        ("directional_ablation", Box::new(|_| directional_ablation())),
        ("fusion_matches", Box::new(fusion_matches)),
        ("determinism", Box::new(|_| determinism())),
    ];
    let mut failed = 0;
    for (name, mut check) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|n| n == name)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
