//! Differentially private histograms of per-example gradient norms.
//!
//! A histogram spans [0, R) in `b` equal bins, with the last bin absorbing
//! every norm at or above R. Adding or removing one example moves exactly
//! one unit of count, so the release has sensitivity 1 and Gaussian noise
//! with standard deviation σ_H per bin privatizes it.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HistogramError {
    #[error("histogram range must be positive, got {0}")]
    InvalidRange(f64),
    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("gradient norms must be non-negative, got {0}")]
    NegativeNorm(f64),
}

/// Noisy bin counts over gradient-norm range [0, R].
///
/// Counts are the raw privatized values and may be negative; consumers
/// that need a batch-size estimate handle the degenerate cases themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct NormHistogram {
    pub counts: Vec<f64>,
    pub range: f64,
    pub bins: usize,
    pub sigma_h: f64,
}

impl NormHistogram {
    /// Sum of the noisy counts — the DP estimate of the batch size.
    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Width of one bin.
    pub fn bin_width(&self) -> f64 {
        self.range / self.bins as f64
    }

    /// Midpoint of bin `i`, the norm estimate used for every count in it.
    pub fn bin_midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width()
    }

    /// Write `bin_lo,bin_hi,count` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        let width = self.bin_width();
        for (i, count) in self.counts.iter().enumerate() {
            w.write_record(&[
                format!("{}", i as f64 * width),
                format!("{}", (i + 1) as f64 * width),
                format!("{count}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bin index for one norm: ⌊b·g/R⌋ clamped into the last bin.
pub fn bin_index(norm: f64, range: f64, bins: usize) -> usize {
    let raw = (bins as f64 * norm / range).floor();
    if raw >= (bins - 1) as f64 {
        bins - 1
    } else {
        raw as usize
    }
}

/// Build the noisy norm histogram: bin every norm, then add independent
/// N(0, σ_H²) noise to each count. Noise is drawn bin-by-bin from `rng`,
/// so a fixed seed reproduces the histogram bit for bit.
pub fn build_histogram<R: Rng>(
    norms: &[f64],
    range: f64,
    bins: usize,
    sigma_h: f64,
    rng: &mut R,
) -> Result<NormHistogram, HistogramError> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(HistogramError::InvalidRange(range));
    }
    if bins < 2 {
        return Err(HistogramError::TooFewBins(bins));
    }
    let mut counts = vec![0.0; bins];
    for &norm in norms {
        if norm < 0.0 || norm.is_nan() {
            return Err(HistogramError::NegativeNorm(norm));
        }
        counts[bin_index(norm, range, bins)] += 1.0;
    }
    if sigma_h > 0.0 {
        for count in &mut counts {
            let z: f64 = rng.sample(StandardNormal);
            *count += sigma_h * z;
        }
    }
    Ok(NormHistogram {
        counts,
        range,
        bins,
        sigma_h,
    })
}
