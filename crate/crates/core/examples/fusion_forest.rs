//! Random-forest classification of concatenated feature vectors, with JSON
//! persistence of the fitted forest.
//!
//! cargo run --release --example fusion_forest

use dialog_sentiment::corpus::SentimentLabel;
use dialog_sentiment::fusion::{fit_forest, Forest, ForestConfig, FusedVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two noisy "modalities": the first separates negative from the rest, the
/// second separates positive from neutral.
fn sample(rng: &mut ChaCha8Rng, i: usize) -> FusedVector {
    let label = SentimentLabel::ALL[rng.gen_range(0..3)];
    let a = if label == SentimentLabel::Negative { 1.0 } else { -1.0 };
    let t = match label {
        SentimentLabel::Positive => 1.0,
        SentimentLabel::Neutral => -1.0,
        SentimentLabel::Negative => 0.0,
    };
    let mut values = Vec::new();
    for j in 0..8 {
        let signal = if j < 4 { a } else { t };
        let noise: f64 = StandardNormal.sample(rng);
        values.push(signal + 0.8 * noise);
    }
    FusedVector {
        values,
        utterance_id: format!("u{i}"),
        label,
    }
}

fn main() -> dialog_sentiment::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train: Vec<FusedVector> = (0..600).map(|i| sample(&mut rng, i)).collect();
    let test: Vec<FusedVector> = (0..300).map(|i| sample(&mut rng, 1000 + i)).collect();
    let forest = fit_forest(
        &train,
        &ForestConfig {
            num_trees: 50,
            ..Default::default()
        },
    )?;
    let x: Vec<Vec<f64>> = test.iter().map(|v| v.values.clone()).collect();
    let y: Vec<usize> = test.iter().map(|v| v.label.index()).collect();
    println!(
        "{} trees, test accuracy {:.3}",
        forest.trees.len(),
        forest.accuracy(&x, &y)?
    );

    let path = std::env::temp_dir().join("example_forest.json");
    forest.save(&path)?;
    let loaded = Forest::load(&path)?;
    let same = x
        .iter()
        .all(|v| loaded.predict_index(v).ok() == forest.predict_index(v).ok());
    println!("reloaded from {}: identical predictions {same}", path.display());
    println!("first test vector -> {:?}", loaded.predict(&x[0])?);
    Ok(())
}
