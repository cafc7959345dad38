//! Weighted and unweighted accuracy, per-class recalls and fold averaging.
//!
//! cargo run --release --example metrics_table

use dialog_sentiment::metrics::{aggregate_folds, report, ConfusionMatrix, Metric};

fn main() -> dialog_sentiment::Result<()> {
    // Rows are true classes (negative, positive, neutral), columns predictions.
    let folds = [
        [[12, 10, 30], [4, 60, 36], [3, 20, 150]],
        [[20, 8, 25], [6, 55, 40], [5, 18, 147]],
        [[0, 5, 48], [0, 70, 31], [0, 10, 160]],
    ];
    let mut reports = Vec::new();
    for (i, counts) in folds.iter().enumerate() {
        let r = report(&ConfusionMatrix { counts: *counts })?;
        println!(
            "fold {i}: WA {:.3} UA {:.3} recalls {:?}",
            r.wa,
            r.ua,
            r.recalls().map(|x| (x * 1000.0).round() / 1000.0)
        );
        reports.push(r);
    }
    let mean = aggregate_folds(&reports)?;
    let header: Vec<String> = Metric::ALL.iter().map(|m| format!("{:>5}", m.short_name())).collect();
    println!("\n{}", header.join("  "));
    let row: Vec<String> = Metric::ALL
        .iter()
        .map(|&m| format!("{:>5.1}", 100.0 * mean.get(m)))
        .collect();
    println!("{}", row.join("  "));

    let majority = ConfusionMatrix::from_pairs([(0, 2), (1, 2), (2, 2), (2, 2)])?;
    let r = report(&majority)?;
    println!("\nalways-neutral predictor: WA {:.3} UA {:.3}", r.wa, r.ua);
    Ok(())
}
