use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{framing_plan_with, MfccConfig};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, `num_filters x (fft_size / 2 + 1)`.
pub fn mel_filterbank(num_filters: usize, fft_size: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Array2<f64> {
    let bins = fft_size / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (num_filters + 1) as f64))
        .collect();
    let mut bank = Array2::zeros((num_filters, bins));
    for m in 0..num_filters {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate / fft_size as f64;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            bank[[m, k]] = rise.min(fall).max(0.0);
        }
    }
    bank
}

/// Mel filterbank energies per frame, before the log. Exposed for
/// inspection; [`extract_mfcc`] builds on it.
pub fn mel_energies(samples: &[f32], sample_rate: u32, config: &MfccConfig) -> Result<Array2<f64>> {
    config.validate()?;
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let plan = framing_plan_with(samples.len(), config.num_frames, config.overlap_fraction)?;
    let (w, hop) = (plan.window_length, plan.hop_length);
    let n_fft = config.fft_len(w)?;
    let sr = sample_rate as f64;
    let fmax = config.fmax.unwrap_or(sr / 2.0);
    if !(config.fmin >= 0.0 && config.fmin < fmax && fmax <= sr / 2.0) {
        return Err(Error::invalid(format!(
            "filterbank range [{}, {fmax}] Hz is invalid at {sr} Hz",
            config.fmin
        )));
    }
    let bank = mel_filterbank(config.num_mel_filters, n_fft, sr, config.fmin, fmax);
    // Periodic Hann.
    let window: Vec<f64> = (0..w)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / w as f64).cos())
        .collect();
    // Samples past the padded length are never framed.
    let usable = samples.len().min(plan.padded_length);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut out = Array2::zeros((config.num_frames, config.num_mel_filters));
    for t in 0..config.num_frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i;
            let x = if i < w && idx < usable {
                samples[idx] as f64 * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(x, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for m in 0..config.num_mel_filters {
            out[[t, m]] = bank.row(m).iter().zip(&power).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// `num_frames x num_coeffs` cepstra: log mel energies (floored) through an
/// orthonormal DCT-II, keeping the leading coefficients including c0.
pub fn extract_mfcc(samples: &[f32], sample_rate: u32, config: &MfccConfig) -> Result<Array2<f64>> {
    let energies = mel_energies(samples, sample_rate, config)?;
    let n = config.num_mel_filters;
    let basis = dct_basis(config.num_coeffs, n);
    let mut out = Array2::zeros((config.num_frames, config.num_coeffs));
    let mut logs = vec![0.0; n];
    for (t, row) in energies.rows().into_iter().enumerate() {
        for (l, &e) in logs.iter_mut().zip(row.iter()) {
            *l = e.max(config.log_floor).ln();
        }
        for k in 0..config.num_coeffs {
            out[[t, k]] = basis.row(k).iter().zip(&logs).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

fn dct_basis(num_coeffs: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((num_coeffs, n), |(k, i)| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    })
}
