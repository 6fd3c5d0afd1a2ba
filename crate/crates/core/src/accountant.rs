//! Privacy calculus for DP-SGD style training.
//!
//! Everything here is a pure function: Rényi-DP of the subsampled Gaussian
//! mechanism, additive composition, conversion to (ε, δ)-DP, noise-multiplier
//! calibration, the gradient/histogram noise split, and the privacy cost of
//! hyperparameter tuning with random stopping.

use thiserror::Error;

/// Smallest noise multiplier the calibration search will consider.
pub const SIGMA_FLOOR: f64 = 0.01;

/// Default upper bound on the calibrated noise multiplier.
pub const SIGMA_CEILING: f64 = 100.0;

#[derive(Debug, Error)]
pub enum AccountantError {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// No noise multiplier below the ceiling reaches the target epsilon.
    #[error("target epsilon {epsilon} unattainable with sigma <= {ceiling}")]
    Unsatisfiable { epsilon: f64, ceiling: f64 },
}

type Result<T> = std::result::Result<T, AccountantError>;

/// A Rényi-DP guarantee sampled at a fixed set of orders.
///
/// `values[i]` is the RDP parameter at `orders[i]`; orders are strictly
/// increasing and all greater than 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if orders.is_empty() || orders.len() != values.len() {
            return Err(AccountantError::Domain(
                "curve needs equal, non-zero order/value counts".into(),
            ));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) || orders[0] <= 1.0 {
            return Err(AccountantError::Domain(
                "orders must be strictly increasing and > 1".into(),
            ));
        }
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(AccountantError::Domain(
                "RDP values must be finite and non-negative".into(),
            ));
        }
        Ok(Self { orders, values })
    }
}

/// The order grid used for accounting: {1.25, 1.5, 1.75} plus integers 2..=512.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=512).map(f64::from));
    orders
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// RDP of the subsampled Gaussian mechanism evaluated exactly for an
/// integer order via the binomial expansion, in log space.
fn rdp_sgm_integer(q: f64, sigma: f64, alpha: u64) -> f64 {
    debug_assert!(q < 1.0 && alpha >= 2);
    let log_q = q.ln();
    let log_1q = (1.0 - q).ln();
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

    let mut log_binom = 0.0; // ln C(alpha, 0)
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let term = log_binom
            + k as f64 * log_q
            + (alpha - k) as f64 * log_1q
            + (k * k - k) as f64 * inv_two_sigma_sq;
        log_a = log_add(log_a, term);
        if k < alpha {
            log_binom += ((alpha - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    // The moment generating sum is >= 1; clamp tiny negative round-off.
    log_a.max(0.0) / (alpha as f64 - 1.0)
}

/// RDP of one subsampled-Gaussian release: sampling rate `q`, noise
/// multiplier `sigma`, order `alpha`.
///
/// `q = 1` reduces to the plain Gaussian value α/(2σ²). Integer orders use
/// the exact expansion; a non-integer order is bounded from above by the
/// value at its ceiling (RDP is non-decreasing in the order).
pub fn rdp_sgm(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(AccountantError::Domain(format!(
            "sampling rate q must lie in (0, 1], got {q}"
        )));
    }
    if sigma <= 0.0 {
        return Err(AccountantError::Domain(format!(
            "noise multiplier must be positive, got {sigma}"
        )));
    }
    if alpha <= 1.0 || !alpha.is_finite() {
        return Err(AccountantError::Domain(format!(
            "RDP order must be finite and > 1, got {alpha}"
        )));
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let alpha_int = if alpha.fract() == 0.0 {
        alpha as u64
    } else {
        alpha.ceil() as u64
    };
    Ok(rdp_sgm_integer(q, sigma, alpha_int))
}

/// The full SGM curve over a set of orders.
pub fn sgm_curve(q: f64, sigma: f64, orders: &[f64]) -> Result<RdpCurve> {
    let values = orders
        .iter()
        .map(|&a| rdp_sgm(q, sigma, a))
        .collect::<Result<Vec<_>>>()?;
    RdpCurve::new(orders.to_vec(), values)
}

/// Composition over `steps` identical releases: RDP adds up order-wise.
pub fn compose(curve: &RdpCurve, steps: u64) -> RdpCurve {
    RdpCurve {
        orders: curve.orders.clone(),
        values: curve.values.iter().map(|v| v * steps as f64).collect(),
    }
}

/// Convert an RDP curve to an (ε, δ)-DP guarantee.
///
/// Minimizes ε(α) = ρ(α) + ln((α−1)/α) − (ln δ + ln α)/(α−1) over the
/// curve's orders and returns the minimum together with the minimizing
/// order. Negative conversion results are reported as ε = 0.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountantError::Domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let mut best = f64::INFINITY;
    let mut best_order = curve.orders[0];
    for (&alpha, &rho) in curve.orders.iter().zip(&curve.values) {
        let eps = rho + ((alpha - 1.0) / alpha).ln() - (delta.ln() + alpha.ln()) / (alpha - 1.0);
        if eps < best {
            best = eps;
            best_order = alpha;
        }
    }
    Ok((best.max(0.0), best_order))
}

/// Realized ε of `steps` subsampled-Gaussian releases at the given δ.
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<(f64, f64)> {
    let curve = sgm_curve(q, sigma, &default_orders())?;
    rdp_to_dp(&compose(&curve, steps), delta)
}

/// Smallest noise multiplier whose accounted ε stays at or below the target.
///
/// Bisects over [SIGMA_FLOOR, ceiling], always rounding toward the larger
/// (more private) endpoint, so the returned σ satisfies ε(σ) ≤ target while
/// ε(σ − 10⁻³) ≥ target.
pub fn calibrate_sigma_with_ceiling(
    target_epsilon: f64,
    delta: f64,
    q: f64,
    steps: u64,
    ceiling: f64,
) -> Result<f64> {
    if target_epsilon <= 0.0 {
        return Err(AccountantError::Domain(format!(
            "target epsilon must be positive, got {target_epsilon}"
        )));
    }
    if steps == 0 {
        return Err(AccountantError::Domain("step count must be >= 1".into()));
    }
    let eps_at = |sigma: f64| epsilon_for(q, sigma, steps, delta).map(|(e, _)| e);

    let mut lo = SIGMA_FLOOR;
    let mut hi = ceiling;
    if eps_at(lo)? <= target_epsilon {
        return Ok(lo);
    }
    if eps_at(hi)? > target_epsilon {
        return Err(AccountantError::Unsatisfiable {
            epsilon: target_epsilon,
            ceiling,
        });
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// [`calibrate_sigma_with_ceiling`] with the default ceiling of 100.
pub fn calibrate_sigma(target_epsilon: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    calibrate_sigma_with_ceiling(target_epsilon, delta, q, steps, SIGMA_CEILING)
}

/// Gradient-noise multiplier left over after reserving `sigma_h` for the
/// histogram: σ_T = (σ⁻² − σ_H⁻²)^(−1/2).
///
/// The joint release then costs exactly what a single release with
/// multiplier σ costs, since σ_T⁻² + σ_H⁻² = σ⁻².
pub fn split_noise(sigma: f64, sigma_h: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(AccountantError::Domain(format!(
            "total noise multiplier must be positive, got {sigma}"
        )));
    }
    if sigma_h <= sigma {
        return Err(AccountantError::Domain(format!(
            "histogram multiplier {sigma_h} must exceed total multiplier {sigma} for the split to be feasible"
        )));
    }
    Ok((sigma.powi(-2) - sigma_h.powi(-2)).powf(-0.5))
}

/// Default histogram noise multiplier for a given total multiplier:
/// 5 below σ = 2, 8 on [2, 3], 12 above.
pub fn auto_sigma_h(sigma: f64) -> f64 {
    if sigma < 2.0 {
        5.0
    } else if sigma <= 3.0 {
        8.0
    } else {
        12.0
    }
}

/// Privacy cost of hyperparameter tuning with random stopping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtCost {
    pub epsilon: f64,
    pub delta: f64,
    /// Hard iteration limit T = (1/γ)·ln(1/δ₂).
    pub trial_bound: f64,
}

/// Tuning cost when each training run is (ε₁, δ₁)-DP, the per-trial stop
/// probability is γ, and δ₂ absorbs the truncation failure:
/// ε′ = 3ε₁ + 3√(2δ₁), δ′ = 3√(2δ₁)·T + δ₂.
pub fn lt_tuning_cost(eps1: f64, delta1: f64, gamma: f64, delta2: f64) -> Result<LtCost> {
    if eps1 <= 0.0 {
        return Err(AccountantError::Domain(format!(
            "eps1 must be positive, got {eps1}"
        )));
    }
    if delta1 < 0.0 {
        return Err(AccountantError::Domain(format!(
            "delta1 must be non-negative, got {delta1}"
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(AccountantError::Domain(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    if !(delta2 > 0.0 && delta2 < 1.0) {
        return Err(AccountantError::Domain(format!(
            "delta2 must lie in (0, 1), got {delta2}"
        )));
    }
    let trial_bound = (1.0 / delta2).ln() / gamma;
    let radical = 3.0 * (2.0 * delta1).sqrt();
    Ok(LtCost {
        epsilon: 3.0 * eps1 + radical,
        delta: radical * trial_bound + delta2,
        trial_bound,
    })
}

/// The (ε, δ, q, T, σ, σ_H, σ_T) bundle a training run is accounted against.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub q: f64,
    pub steps: u64,
    pub sigma: f64,
    pub sigma_h: f64,
    pub sigma_t: f64,
}

impl PrivacyBudget {
    /// Budget with an active histogram split; requires σ_H > σ.
    pub fn with_split(
        epsilon: f64,
        delta: f64,
        q: f64,
        steps: u64,
        sigma: f64,
        sigma_h: f64,
    ) -> Result<Self> {
        let sigma_t = split_noise(sigma, sigma_h)?;
        Ok(Self {
            epsilon,
            delta,
            q,
            steps,
            sigma,
            sigma_h,
            sigma_t,
        })
    }

    /// Budget with the whole multiplier spent on gradients (static clipping).
    pub fn without_split(epsilon: f64, delta: f64, q: f64, steps: u64, sigma: f64) -> Self {
        Self {
            epsilon,
            delta,
            q,
            steps,
            sigma,
            sigma_h: f64::INFINITY,
            sigma_t: sigma,
        }
    }
}
