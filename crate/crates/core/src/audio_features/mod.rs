//! Fixed-frame MFCC featurization.
//!
//! Every utterance, whatever its length, is cut into exactly 300 frames by
//! scaling the analysis window to the signal: the time axis is stretched or
//! compressed instead of padded. Each frame yields 20 cepstral coefficients,
//! and first and second order regression deltas are appended, giving a
//! 300 x 60 matrix.

mod cache;
mod mfcc;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};

pub use cache::{read_matrix_file, write_matrix_file, CACHE_MAGIC, CACHE_VERSION};
pub use mfcc::{extract_mfcc, hz_to_mel, mel_energies, mel_filterbank, mel_to_hz};

pub const NUM_FRAMES: usize = 300;
pub const NUM_COEFFS: usize = 20;
pub const FEATURE_COLUMNS: usize = 3 * NUM_COEFFS;
pub const DELTA_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub num_frames: usize,
    pub num_coeffs: usize,
    /// Fraction of a window shared with the next one; the hop is
    /// `(1 - overlap_fraction) * window`.
    pub overlap_fraction: f64,
    pub num_mel_filters: usize,
    /// Fixed FFT length. `None` picks the next power of two at or above
    /// `max(window_length, min_fft_size)`.
    pub fft_size: Option<usize>,
    pub min_fft_size: usize,
    pub log_floor: f64,
    pub fmin: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub fmax: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            num_frames: NUM_FRAMES,
            num_coeffs: NUM_COEFFS,
            overlap_fraction: 0.25,
            num_mel_filters: 40,
            fft_size: None,
            min_fft_size: 512,
            log_floor: 1e-10,
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 || self.num_coeffs == 0 || self.num_mel_filters < self.num_coeffs {
            return Err(Error::invalid(
                "need num_frames > 0 and num_mel_filters >= num_coeffs > 0",
            ));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::invalid("overlap_fraction must lie in [0, 1)"));
        }
        if let Some(n) = self.fft_size {
            if !n.is_power_of_two() {
                return Err(Error::invalid(format!("fft_size {n} is not a power of two")));
            }
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log_floor must be positive"));
        }
        Ok(())
    }

    pub(crate) fn fft_len(&self, window_length: usize) -> Result<usize> {
        match self.fft_size {
            Some(n) if n < window_length => Err(Error::invalid(format!(
                "fft_size {n} is shorter than the {window_length}-sample window"
            ))),
            Some(n) => Ok(n),
            None => Ok(window_length.max(self.min_fft_size).next_power_of_two()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramingPlan {
    pub window_length: usize,
    pub hop_length: usize,
    /// Length the signal is zero-padded (or trimmed) to so that exactly
    /// `num_frames` windows fit.
    pub padded_length: usize,
}

/// Window and hop for 300 frames at 25 % overlap.
pub fn framing_plan(num_samples: usize) -> Result<FramingPlan> {
    framing_plan_with(num_samples, NUM_FRAMES, 0.25)
}

pub fn framing_plan_with(num_samples: usize, num_frames: usize, overlap: f64) -> Result<FramingPlan> {
    if num_frames == 0 {
        return Err(Error::invalid("num_frames must be positive"));
    }
    if num_samples < num_frames {
        return Err(Error::invalid(format!(
            "utterance too short: {num_samples} samples for {num_frames} frames"
        )));
    }
    let hop_fraction = 1.0 - overlap;
    let span = 1.0 + hop_fraction * (num_frames - 1) as f64;
    let window_length = (num_samples as f64 / span).ceil() as usize;
    let hop_length = ((hop_fraction * window_length as f64).round() as usize).max(1);
    Ok(FramingPlan {
        window_length,
        hop_length,
        padded_length: window_length + (num_frames - 1) * hop_length,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// Columns `0..20` MFCC, `20..40` delta, `40..60` delta-delta.
    pub values: Array2<f64>,
    pub window_length: usize,
    pub hop_length: usize,
}

/// Regression deltas over radius 2 with edge frames replicated.
pub fn compute_deltas(matrix: &Array2<f64>) -> Array2<f64> {
    let (t_len, d) = matrix.dim();
    let mut out = Array2::zeros((t_len, d));
    if t_len == 0 {
        return out;
    }
    let r = DELTA_RADIUS as isize;
    let denom = 2.0 * (1..=r).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |i: isize| i.clamp(0, t_len as isize - 1) as usize;
    for t in 0..t_len as isize {
        for n in 1..=r {
            let ahead = matrix.row(clamp(t + n));
            let behind = matrix.row(clamp(t - n));
            let mut row = out.row_mut(t as usize);
            for j in 0..d {
                row[j] += n as f64 * (ahead[j] - behind[j]);
            }
        }
    }
    out.mapv_inplace(|x| x / denom);
    out
}

/// `[MFCC | delta | delta-delta]` for one utterance.
pub fn featurize(utterance: &Utterance, config: &MfccConfig) -> Result<FeatureMatrix> {
    featurize_samples(&utterance.samples, utterance.sample_rate, config)
        .map_err(|e| Error::invalid(format!("utterance {}: {e}", utterance.id)))
}

pub fn featurize_samples(samples: &[f32], sample_rate: u32, config: &MfccConfig) -> Result<FeatureMatrix> {
    let plan = framing_plan_with(samples.len(), config.num_frames, config.overlap_fraction)?;
    let mfcc = extract_mfcc(samples, sample_rate, config)?;
    let delta = compute_deltas(&mfcc);
    let delta2 = compute_deltas(&delta);
    let c = config.num_coeffs;
    let mut values = Array2::zeros((config.num_frames, 3 * c));
    values.slice_mut(s![.., 0..c]).assign(&mfcc);
    values.slice_mut(s![.., c..2 * c]).assign(&delta);
    values.slice_mut(s![.., 2 * c..3 * c]).assign(&delta2);
    Ok(FeatureMatrix {
        values,
        window_length: plan.window_length,
        hop_length: plan.hop_length,
    })
}

/// Featurizes in parallel; output order matches input order.
pub fn featurize_batch(utterances: &[&Utterance], config: &MfccConfig) -> Result<Vec<FeatureMatrix>> {
    utterances.par_iter().map(|u| featurize(u, config)).collect()
}

/// Per-column mean and standard deviation over all rows of all matrices.
/// Columns with zero spread get a standard deviation of 1.
pub fn column_moments<'a>(matrices: impl IntoIterator<Item = &'a Array2<f64>>) -> (Vec<f64>, Vec<f64>) {
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for m in matrices {
        if sum.is_empty() {
            sum = vec![0.0; m.ncols()];
            sum_sq = vec![0.0; m.ncols()];
        }
        for row in m.rows() {
            for (j, &x) in row.iter().enumerate() {
                sum[j] += x;
                sum_sq[j] += x * x;
            }
        }
        rows += m.nrows();
    }
    let n = rows.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = (sq / n - m * m).max(0.0);
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}
