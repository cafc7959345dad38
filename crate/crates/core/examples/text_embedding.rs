//! Tokenizes transcripts and embeds them as fixed-length sequences of
//! 300-dimensional vectors.
//!
//! cargo run --release --example text_embedding

use dialog_sentiment::text_features::{embed, tokenize, EmbeddingConfig, EmbeddingProvider};

fn main() -> dialog_sentiment::Result<()> {
    let config = EmbeddingConfig {
        max_tokens: 8,
        ..Default::default()
    };
    let provider = EmbeddingProvider::Hashed;
    for line in [
        "Oh, that's WONDERFUL news! [laughter]",
        "i guess it was okay",
        "no no that is terrible, awful really bad today",
    ] {
        let tokens = tokenize(line);
        let seq = embed(&tokens, &config, &provider)?;
        let norm: f64 = seq.values.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{tokens:?}");
        println!(
            "  -> {:?}, {} real tokens, first row norm {norm:.3}",
            seq.values.dim(),
            seq.true_length
        );
    }
    let a = provider.vector("great");
    let b = provider.vector("great");
    println!("hashed vectors are stable per token: {}", a == b);
    Ok(())
}
