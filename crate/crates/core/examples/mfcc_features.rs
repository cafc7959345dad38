//! Fixed 300-frame MFCC featurization of signals of different lengths, and
//! the mel filter that responds most to a 440 Hz tone.
//!
//! cargo run --release --example mfcc_features

use dialog_sentiment::audio_features::{featurize_samples, framing_plan, mel_energies, mel_filterbank, MfccConfig};

fn tone(freq: f64, seconds: f64, rate: u32) -> Vec<f32> {
    let n = (seconds * rate as f64) as usize;
    (0..n)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32)
        .collect()
}

fn main() -> dialog_sentiment::Result<()> {
    let config = MfccConfig::default();
    for seconds in [0.1, 1.0, 4.5, 30.0] {
        let samples = tone(440.0, seconds, 16_000);
        let plan = framing_plan(samples.len())?;
        let fm = featurize_samples(&samples, 16_000, &config)?;
        println!(
            "{seconds:>5} s: {} samples -> window {} hop {} padded {} -> {:?}",
            samples.len(),
            plan.window_length,
            plan.hop_length,
            plan.padded_length,
            fm.values.dim()
        );
    }

    let samples = tone(440.0, 1.0, 16_000);
    let energies = mel_energies(&samples, 16_000, &config)?;
    let total: Vec<f64> = (0..energies.ncols()).map(|j| energies.column(j).sum()).collect();
    let peak = (0..total.len()).max_by(|&a, &b| total[a].total_cmp(&total[b])).unwrap();
    let plan = framing_plan(samples.len())?;
    let fft = plan.window_length.next_power_of_two().max(config.min_fft_size);
    let bank = mel_filterbank(config.num_mel_filters, fft, 16_000.0, 0.0, 8000.0);
    let center_bin = (0..bank.ncols())
        .max_by(|&a, &b| bank[[peak, a]].total_cmp(&bank[[peak, b]]))
        .unwrap();
    println!(
        "440 Hz tone peaks in mel filter {peak} (center near {:.0} Hz)",
        center_bin as f64 * 16_000.0 / fft as f64
    );
    Ok(())
}
