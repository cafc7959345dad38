//! Generates a small synthetic dialog corpus, writes it as a manifest with
//! WAV files and reads it back.
//!
//! cargo run --release --example generate_corpus -- [output_dir]

use dialog_sentiment::corpus::{
    generate_synthetic_corpus, load_manifest, save_manifest, GeneratorConfig, SentimentLabel,
};

fn main() -> dialog_sentiment::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example_corpus".into());
    let config = GeneratorConfig {
        num_dialogs: 20,
        ..Default::default()
    };
    let corpus = generate_synthetic_corpus(&config)?;
    let counts = corpus.class_counts();
    println!("{} utterances in {} dialogs", corpus.len(), corpus.dialogs().len());
    for label in [
        SentimentLabel::Negative,
        SentimentLabel::Positive,
        SentimentLabel::Neutral,
    ] {
        println!("  {:<8} {}", label.name(), counts.get(label));
    }
    let first = &corpus.utterances()[0];
    println!(
        "{}: {:.2} s, \"{}\"",
        first.id,
        first.samples.len() as f64 / first.sample_rate as f64,
        first.transcript.join(" ")
    );

    let path = save_manifest(&corpus, &out)?;
    let reloaded = load_manifest(&path)?;
    println!("manifest {} reloads {} utterances", path.display(), reloaded.len());
    Ok(())
}
