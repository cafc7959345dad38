//! Trains the Conv1D + LSTM text model on embedded transcripts, without a
//! learning-rate scheduler.
//!
//! cargo run --release --example train_text

use dialog_sentiment::corpus::{generate_synthetic_corpus, GeneratorConfig};
use dialog_sentiment::nets::{build_text, TextModelSpec};
use dialog_sentiment::splits::{assign_folds, fold_view};
use dialog_sentiment::text_features::{embed, EmbeddingConfig, EmbeddingProvider, EMBEDDING_DIM};
use dialog_sentiment::trainer::{evaluate_report, train, Dataset, TrainConfig};

fn main() -> dialog_sentiment::Result<()> {
    let gen = GeneratorConfig {
        num_dialogs: 60,
        sample_rate: 8000,
        duration_range: [0.1, 0.1],
        ..Default::default()
    };
    let corpus = generate_synthetic_corpus(&gen)?;
    let folds = assign_folds(&corpus, 3, 7)?;
    let view = fold_view(&corpus, &folds, 0, 1)?;
    let embedding = EmbeddingConfig {
        max_tokens: 16,
        ..Default::default()
    };
    let provider = EmbeddingProvider::Hashed;
    let dataset = |ids: &[String]| -> dialog_sentiment::Result<Dataset> {
        let mut d = Dataset::new(vec![embedding.max_tokens, EMBEDDING_DIM]);
        for id in ids {
            let u = corpus.get(id).expect("id from the fold view");
            let seq = embed(&u.transcript, &embedding, &provider)?;
            d.push(seq.values.iter().copied(), u.label.expect("labeled"))?;
        }
        Ok(d)
    };
    let (train_set, val_set, test_set) = (
        dataset(&view.train_ids)?,
        dataset(&view.validation_ids)?,
        dataset(&view.test_ids)?,
    );

    let mut graph = build_text(&TextModelSpec::default(), (embedding.max_tokens, EMBEDDING_DIM), 2)?;
    println!(
        "stage shapes {:?}, {} trainable parameters",
        graph.stage_shapes(),
        graph.num_trainable()
    );
    let config = TrainConfig {
        max_epochs: 12,
        seed: 2,
        ..TrainConfig::text_default()
    };
    let run = train(&mut graph, &train_set, &val_set, &config)?;
    for r in &run.history {
        println!(
            "epoch {:>2} loss {:.4} val UA {:.3} WA {:.3}",
            r.epoch, r.train_loss, r.validation.ua, r.validation.wa
        );
    }
    let test = evaluate_report(&run.checkpoint, &test_set)?;
    println!(
        "best epoch {}; test UA {:.3} WA {:.3}",
        run.best_epoch, test.ua, test.wa
    );
    Ok(())
}
