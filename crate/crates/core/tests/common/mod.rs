//! Independent oracles shared by the integration suites. Everything here
//! recomputes its target quantity through a different route than the
//! library: numerical quadrature for the RDP divergence, sorting for
//! quantiles, raw-norm brute force for the error curve, central finite
//! differences for gradients.

#![allow(dead_code)]

use dcsgd::models::{loss, Example, ModelParams};

/// Rényi divergence D_alpha((1-q)N(0,s^2) + qN(1,s^2) || N(0,s^2)) by
/// composite Simpson quadrature with compensated summation.
pub fn sgm_rdp_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let lo = -14.0 * sigma - 2.0;
    let hi = alpha + 14.0 * sigma + 2.0;
    let n = 400_000usize; // even
    let h = (hi - lo) / n as f64;

    let ln_q = q.ln();
    let ln_1q = (1.0 - q).ln();
    let two_sigma_sq = 2.0 * sigma * sigma;
    let ln_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();

    // exp(ln phi_sigma(x) + alpha * ln((1-q) + q e^{(2x-1)/(2s^2)}))
    let integrand = |x: f64| -> f64 {
        let s = (2.0 * x - 1.0) / two_sigma_sq;
        let (a, b) = (ln_1q, ln_q + s);
        let ln_ratio = if a >= b {
            a + (b - a).exp().ln_1p()
        } else {
            b + (a - b).exp().ln_1p()
        };
        let ln_f = ln_norm - x * x / two_sigma_sq + alpha * ln_ratio;
        ln_f.exp()
    };

    // Kahan-compensated Simpson sum.
    let mut sum = integrand(lo) + integrand(hi);
    let mut comp = 0.0;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        let term = w * integrand(lo + i as f64 * h);
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let integral = sum * h / 3.0;
    integral.ln() / (alpha - 1.0)
}

/// k-th smallest value with k = ceil(p * n): the sort-order quantile the
/// histogram's running-sum rule targets.
pub fn sort_quantile(norms: &[f64], p: f64) -> f64 {
    let mut sorted = norms.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[k.min(sorted.len()) - 1]
}

/// Exact expected squared error on the raw norms:
/// sigma_t^2 c^2 d / B^2 + mean(max(norm - c, 0)^2).
pub fn exact_error_curve(norms: &[f64], c: f64, sigma_t: f64, batch: f64, dim: usize) -> f64 {
    let variance = sigma_t * sigma_t * c * c * dim as f64 / (batch * batch);
    let bias = norms.iter().map(|&g| (g - c).max(0.0).powi(2)).sum::<f64>() / norms.len() as f64;
    variance + bias
}

/// Central finite differences of the loss at step h = 1e-5.
pub fn finite_difference_gradient(params: &ModelParams, example: &Example) -> Vec<f64> {
    let h = 1e-5;
    let mut grad = vec![0.0; params.theta.len()];
    let mut probe = params.clone();
    for (i, g) in grad.iter_mut().enumerate() {
        probe.theta[i] = params.theta[i] + h;
        let up = loss(&probe, example).unwrap();
        probe.theta[i] = params.theta[i] - h;
        let down = loss(&probe, example).unwrap();
        probe.theta[i] = params.theta[i];
        *g = (up - down) / (2.0 * h);
    }
    grad
}
