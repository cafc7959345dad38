//! Runs the whole experiment on a small corpus: acoustic and text training
//! per fold and monitor, random-forest fusion, and the rendered report.
//!
//! cargo run --release --example full_pipeline -- [output_dir]

use dialog_sentiment::corpus::GeneratorConfig;
use dialog_sentiment::experiment::{run_pipeline, CorpusSource, ExperimentConfig};
use dialog_sentiment::metrics::Metric;

fn main() -> dialog_sentiment::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example_pipeline".into());
    let mut config = ExperimentConfig {
        corpus: CorpusSource::Synthetic(GeneratorConfig {
            num_dialogs: 45,
            duration_range: [0.5, 0.8],
            ..Default::default()
        }),
        k_folds: 3,
        monitors: vec![Metric::Wa, Metric::NegRecall, Metric::Ua],
        output_dir: out.clone().into(),
        ..Default::default()
    };
    config.acoustic_training.max_epochs = 10;
    config.text_training.max_epochs = 10;
    let report = run_pipeline(config, false)?;
    println!("{}", report.render());
    println!("report.json and report.txt written to {out}; rerunning skips completed runs");
    Ok(())
}
