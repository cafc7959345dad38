//! Trains the small acoustic CNN on MFCC matrices with plateau learning-rate
//! halving, early stopping and best-checkpoint selection, monitoring
//! negative-class recall.
//!
//! cargo run --release --example train_acoustic -- [run_dir]

use dialog_sentiment::audio_features::{column_moments, featurize, MfccConfig};
use dialog_sentiment::corpus::{generate_synthetic_corpus, Corpus, GeneratorConfig};
use dialog_sentiment::metrics::Metric;
use dialog_sentiment::nets::{build_acoustic, AcousticModelSpec};
use dialog_sentiment::splits::{assign_folds, fold_view};
use dialog_sentiment::trainer::{evaluate_report, train, write_run_dir, Dataset, TrainConfig};

fn dataset(
    corpus: &Corpus,
    ids: &[String],
    mfcc: &MfccConfig,
) -> dialog_sentiment::Result<(Dataset, Vec<ndarray::Array2<f64>>)> {
    let mut data = Dataset::new(vec![1, 300, 60]);
    let mut mats = Vec::new();
    for id in ids {
        let u = corpus.get(id).expect("id from the fold view");
        let fm = featurize(u, mfcc)?;
        data.push(fm.values.iter().copied(), u.label.expect("labeled"))?;
        mats.push(fm.values);
    }
    Ok((data, mats))
}

fn main() -> dialog_sentiment::Result<()> {
    let run_dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example_acoustic_run".into());
    let corpus = generate_synthetic_corpus(&GeneratorConfig {
        num_dialogs: 45,
        ..Default::default()
    })?;
    let folds = assign_folds(&corpus, 3, 7)?;
    let view = fold_view(&corpus, &folds, 0, 1)?;
    let mfcc = MfccConfig::default();
    let (train_set, train_mats) = dataset(&corpus, &view.train_ids, &mfcc)?;
    let (val_set, _) = dataset(&corpus, &view.validation_ids, &mfcc)?;
    let (test_set, _) = dataset(&corpus, &view.test_ids, &mfcc)?;

    let mut graph = build_acoustic(&AcousticModelSpec::desk(), (300, 60, 1), 1)?;
    let (mean, std) = column_moments(&train_mats);
    graph.set_input_normalization(&mean, &std)?;
    let config = TrainConfig {
        initial_lr: 3e-3,
        max_epochs: 15,
        monitor: Metric::NegRecall,
        seed: 1,
        ..Default::default()
    };
    let run = train(&mut graph, &train_set, &val_set, &config)?;
    for r in &run.history {
        println!(
            "epoch {:>2} loss {:.4} val UA {:.3} neg recall {:.3} lr {:.1e}",
            r.epoch, r.train_loss, r.validation.ua, r.validation.neg_recall, r.lr
        );
    }
    println!(
        "best epoch {} (neg recall {:.3}), stopped early: {}",
        run.best_epoch, run.best_value, run.stopped_early
    );
    let test = evaluate_report(&run.checkpoint, &test_set)?;
    println!(
        "test: WA {:.3} UA {:.3} neg recall {:.3}",
        test.wa, test.ua, test.neg_recall
    );
    write_run_dir(
        &run_dir,
        &serde_json::to_value(&config).expect("config serializes"),
        &run,
    )?;
    println!("run directory written to {run_dir}");
    Ok(())
}
