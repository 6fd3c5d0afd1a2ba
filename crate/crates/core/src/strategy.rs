//! Clipping-threshold selection from noisy norm histograms.
//!
//! Both dynamic strategies are pure post-processing of an already-released
//! histogram, so they consume no additional privacy budget. The percentile
//! strategy chases the bin holding the p-th quantile of gradient norms; the
//! expected-error strategy picks the candidate threshold minimizing the sum
//! of noise variance and clipping bias of a single privatized gradient.

use crate::histogram::NormHistogram;
use thiserror::Error;

/// Re-centerings allowed when the error minimizer keeps landing on a
/// boundary candidate before the current argmin is accepted.
pub const MAX_RECENTER: usize = 10;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("percentile must lie in (0, 1), got {0}")]
    InvalidPercentile(f64),
    #[error("candidate threshold must be positive, got {0}")]
    InvalidCandidate(f64),
    #[error("expected batch size must be >= 1, got {0}")]
    InvalidBatch(f64),
    #[error("model dimension must be >= 1, got {0}")]
    InvalidDimension(usize),
}

/// How the clipping threshold evolves between iterations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdStrategy {
    /// Fixed threshold; no histogram is built.
    Static,
    /// Track the p-th quantile of gradient norms.
    Percentile { p: f64 },
    /// Minimize the estimated expected squared error of one gradient.
    ExpectedError,
}

/// Current clipping threshold and histogram range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipState {
    pub c: f64,
    pub r: f64,
    pub strategy: ThresholdStrategy,
}

/// Expected squared error of a single privatized gradient at one candidate
/// threshold, split into its noise and clipping parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub candidate_c: f64,
    pub variance: f64,
    pub bias: f64,
    pub total: f64,
}

/// Threshold update for the percentile strategy.
///
/// Walks the noisy counts left to right until the running sum reaches
/// p·S′ and adopts the stopping bin's midpoint; the range follows as 2C.
/// A non-positive noisy total S′ leaves the state untouched.
pub fn percentile_threshold(
    hist: &NormHistogram,
    p: f64,
    state: &ClipState,
) -> Result<ClipState, StrategyError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StrategyError::InvalidPercentile(p));
    }
    let total = hist.total_count();
    if total <= 0.0 {
        return Ok(*state);
    }
    let target = p * total;
    let mut running = 0.0;
    let mut stop = hist.bins - 1;
    for (i, count) in hist.counts.iter().enumerate() {
        running += count;
        if running >= target {
            stop = i;
            break;
        }
    }
    let c = hist.bin_midpoint(stop);
    Ok(ClipState {
        c,
        r: 2.0 * c,
        strategy: state.strategy,
    })
}

/// Estimate the expected squared error at candidate threshold `c`.
///
/// Variance is σ_T²·c²·d/B²; bias averages the squared clipped excess over
/// the histogram, with each bin's mass placed at its midpoint and the noisy
/// total clamped below at one example. Raw counts can push the bias sum
/// negative, in which case it is reported as zero.
pub fn expected_squared_error(
    hist: &NormHistogram,
    c: f64,
    sigma_t: f64,
    expected_batch: f64,
    dim: usize,
) -> Result<ErrorEstimate, StrategyError> {
    if !c.is_finite() || c <= 0.0 {
        return Err(StrategyError::InvalidCandidate(c));
    }
    if !expected_batch.is_finite() || expected_batch < 1.0 {
        return Err(StrategyError::InvalidBatch(expected_batch));
    }
    if dim < 1 {
        return Err(StrategyError::InvalidDimension(dim));
    }
    let variance = sigma_t * sigma_t * c * c * dim as f64 / (expected_batch * expected_batch);
    let denom = hist.total_count().max(1.0);
    let mut excess = 0.0;
    for (i, count) in hist.counts.iter().enumerate() {
        let over = hist.bin_midpoint(i) - c;
        if over > 0.0 {
            excess += count * over * over;
        }
    }
    let bias = (excess / denom).max(0.0);
    Ok(ErrorEstimate {
        candidate_c: c,
        variance,
        bias,
        total: variance + bias,
    })
}

/// Threshold update for the expected-error strategy.
///
/// Evaluates the twenty candidates 0.1C..2.0C, re-centering on a boundary
/// argmin up to [`MAX_RECENTER`] times, then applies the cautious range
/// rule: double R when the last bin holds at least half of S′, halve it
/// when the right half of the bins holds at most S′/b.
///
/// Repeated downward re-centering under a noise-degenerate bias estimate
/// (negative tail counts can zero it out) would otherwise drive C to an
/// exact float 0; the threshold is floored at 1e-15 of the range to keep
/// the C > 0 invariant.
pub fn error_minimizing_threshold(
    hist: &NormHistogram,
    state: &ClipState,
    sigma_t: f64,
    expected_batch: f64,
    dim: usize,
) -> Result<ClipState, StrategyError> {
    let total = hist.total_count();
    if total <= 0.0 {
        return Ok(*state);
    }

    let floor = state.r * 1e-15;
    let mut center = state.c.max(floor);
    let mut chosen = center;
    for pass in 0..=MAX_RECENTER {
        let mut best: Option<ErrorEstimate> = None;
        let mut best_idx = 0;
        for i in 1..=20 {
            let candidate = i as f64 * center / 10.0;
            let est = expected_squared_error(hist, candidate, sigma_t, expected_batch, dim)?;
            // Ties break toward the smaller candidate.
            if best.as_ref().is_none_or(|b| est.total < b.total) {
                best = Some(est);
                best_idx = i;
            }
        }
        chosen = best
            .expect("candidate set is non-empty")
            .candidate_c
            .max(floor);
        if best_idx != 1 && best_idx != 20 || pass == MAX_RECENTER {
            break;
        }
        center = chosen;
    }

    let last_bin = hist.counts[hist.bins - 1];
    let right_half: f64 = hist.counts[hist.bins / 2..].iter().sum();
    let r = if last_bin >= 0.5 * total {
        2.0 * state.r
    } else if right_half <= total / hist.bins as f64 {
        0.5 * state.r
    } else {
        state.r
    };

    Ok(ClipState {
        c: chosen,
        r,
        strategy: state.strategy,
    })
}

/// Like [`error_minimizing_threshold`] but also reports the winning
/// candidate's error decomposition for metrics emission.
pub fn error_minimizing_threshold_with_estimate(
    hist: &NormHistogram,
    state: &ClipState,
    sigma_t: f64,
    expected_batch: f64,
    dim: usize,
) -> Result<(ClipState, Option<ErrorEstimate>), StrategyError> {
    let next = error_minimizing_threshold(hist, state, sigma_t, expected_batch, dim)?;
    if hist.total_count() <= 0.0 {
        return Ok((next, None));
    }
    let est = expected_squared_error(hist, next.c, sigma_t, expected_batch, dim)?;
    Ok((next, Some(est)))
}
