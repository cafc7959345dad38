//! Dialog-grouped stratified folds and the train/validation/test views.
//!
//! cargo run --release --example dialog_folds

use dialog_sentiment::corpus::{generate_synthetic_corpus, GeneratorConfig};
use dialog_sentiment::splits::{assign_folds, fold_view};

fn main() -> dialog_sentiment::Result<()> {
    let gen = GeneratorConfig {
        duration_range: [0.05, 0.05],
        sample_rate: 8000,
        ..Default::default()
    };
    let corpus = generate_synthetic_corpus(&gen)?;
    let k = 10;
    let folds = assign_folds(&corpus, k, 7)?;
    let total = corpus.class_counts();
    println!(
        "global proportions neg/pos/neu: {:.3} {:.3} {:.3}",
        frac(total.0[0], total.total()),
        frac(total.0[1], total.total()),
        frac(total.0[2], total.total())
    );
    for (f, c) in folds.fold_class_counts(&corpus).iter().enumerate() {
        let n: usize = c.iter().sum();
        println!(
            "fold {f}: {n:>4} utterances  {:.3} {:.3} {:.3}",
            frac(c[0], n),
            frac(c[1], n),
            frac(c[2], n)
        );
    }
    println!(
        "max proportion deviation {:.4}",
        folds.max_proportion_deviation(&corpus)
    );
    let view = fold_view(&corpus, &folds, 0, 1)?;
    println!(
        "test fold 0, validation fold 1: train {} / validation {} / test {}",
        view.train_ids.len(),
        view.validation_ids.len(),
        view.test_ids.len()
    );
    Ok(())
}

fn frac(a: usize, b: usize) -> f64 {
    a as f64 / b as f64
}
