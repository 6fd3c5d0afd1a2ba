//! The dynamic-clipping DP-SGD training loop.
//!
//! Each iteration Poisson-samples a batch, computes exact per-example
//! gradients, performs the private descent step with the threshold chosen
//! at the previous iteration, then releases a noisy norm histogram and
//! derives the next threshold from it. All randomness flows through one
//! seeded generator in a fixed order — parameter init, then per iteration:
//! batch sampling, gradient noise, histogram noise — so a run is
//! reproducible bit for bit from (seed, config, dataset).

use crate::accountant::{compose, rdp_to_dp, sgm_curve, AccountantError, PrivacyBudget, RdpCurve};
use crate::data::Dataset;
use crate::histogram::{build_histogram, HistogramError};
use crate::models::{loss_and_gradient, Architecture, GradientVector, ModelError, ModelParams};
use crate::strategy::{
    error_minimizing_threshold_with_estimate, percentile_threshold, ClipState, StrategyError,
    ThresholdStrategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Iterations between privacy-ledger refreshes; the final step is always
/// accounted exactly.
const EPSILON_CHECKPOINT_EVERY: u64 = 50;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged: non-finite batch loss {loss} at iteration {iteration}")]
    Diverged { iteration: u64, loss: f64 },
}

/// First-order update rule fed with the privatized averaged gradient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    /// SGD with the conventional 0.9 momentum.
    pub fn sgd_default() -> Self {
        Optimizer::SgdMomentum { momentum: 0.9 }
    }

    /// Adam with its stock (β₁, β₂, ε) = (0.9, 0.999, 1e-8).
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Mutable optimizer accumulators, sized to the flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptState {
    velocity: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptState {
    pub fn new(dim: usize) -> Self {
        Self {
            velocity: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step: 0,
        }
    }
}

/// Full specification of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Expected batch size B; the Poisson rate is B over the train-split size.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub budget: PrivacyBudget,
    pub clip: ClipState,
    /// Histogram bin count b.
    pub bins: usize,
    /// Hidden width for an MLP; `None` trains logistic regression.
    pub hidden_dim: Option<usize>,
    pub seed: u64,
}

/// One row of the run ledger. `c` and `r` are the values in force during
/// the iteration; the error terms describe the threshold selected at its
/// end (NaN when the strategy does not estimate them).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRow {
    pub t: u64,
    pub c: f64,
    pub r: f64,
    pub batch_size: usize,
    pub train_loss: f64,
    pub variance_term: f64,
    pub bias_term: f64,
    pub eps_spent: f64,
    /// Fraction of the batch whose gradient survived unclipped; NaN for an
    /// empty batch. Diagnostic only, not part of the CSV schema.
    pub unclipped_fraction: f64,
}

/// Per-iteration records plus the end-of-run summary values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<IterationRow>,
    pub final_accuracy: f64,
    pub realized_epsilon: f64,
}

impl RunMetrics {
    /// Write the canonical metrics table:
    /// `t,C_t,R_t,batch_size,train_loss,variance_term,bias_term,eps_spent`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "C_t",
            "R_t",
            "batch_size",
            "train_loss",
            "variance_term",
            "bias_term",
            "eps_spent",
        ])?;
        for row in &self.rows {
            w.write_record(&[
                row.t.to_string(),
                format!("{}", row.c),
                format!("{}", row.r),
                row.batch_size.to_string(),
                format!("{}", row.train_loss),
                format!("{}", row.variance_term),
                format!("{}", row.bias_term),
                format!("{}", row.eps_spent),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Poisson-subsampled batch: every index enters independently with
/// probability `q`. The batch may be empty.
pub fn poisson_sample<R: Rng>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    (0..n).filter(|_| rng.gen::<f64>() < q).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale a gradient down to norm `c` if it exceeds it: g / max(1, ‖g‖/c).
pub fn clip(g: &[f64], c: f64) -> GradientVector {
    let scale = 1.0 / (l2_norm(g) / c).max(1.0);
    g.iter().map(|x| x * scale).collect()
}

/// One private descent step: clip each batch gradient to `c`, sum them,
/// add N(0, σ_T²c² I) coordinate-wise, average by the expected batch size,
/// and feed the result through the optimizer.
#[allow(clippy::too_many_arguments)]
pub fn dp_step<R: Rng>(
    params: &mut ModelParams,
    batch_gradients: &[GradientVector],
    c: f64,
    sigma_t: f64,
    expected_batch: f64,
    learning_rate: f64,
    optimizer: &Optimizer,
    state: &mut OptState,
    rng: &mut R,
) {
    let dim = params.theta.len();
    let mut update = vec![0.0; dim];
    for g in batch_gradients {
        let clipped = clip(g, c);
        for (u, v) in update.iter_mut().zip(&clipped) {
            *u += v;
        }
    }
    if sigma_t > 0.0 {
        let scale = sigma_t * c;
        for u in update.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *u += scale * z;
        }
    }
    for u in update.iter_mut() {
        *u /= expected_batch;
    }
    apply_update(params, &update, learning_rate, optimizer, state);
}

fn apply_update(
    params: &mut ModelParams,
    grad: &[f64],
    learning_rate: f64,
    optimizer: &Optimizer,
    state: &mut OptState,
) {
    match *optimizer {
        Optimizer::SgdMomentum { momentum } => {
            let thetas = params.theta.iter_mut().zip(&mut state.velocity);
            for ((theta, v), &g) in thetas.zip(grad) {
                *v = momentum * *v + g;
                *theta -= learning_rate * *v;
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            state.step += 1;
            let bc1 = 1.0 - beta1.powi(state.step as i32);
            let bc2 = 1.0 - beta2.powi(state.step as i32);
            let thetas = params
                .theta
                .iter_mut()
                .zip(&mut state.velocity)
                .zip(&mut state.second_moment);
            for (((theta, m), v), &g) in thetas.zip(grad) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// Run the full training loop and return the final parameters with the
/// per-iteration ledger.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, RunMetrics), TrainError> {
    let train_examples: Vec<_> = dataset.train_examples().collect();
    let n = train_examples.len();
    if n == 0 {
        return Err(TrainError::Config("empty training split".into()));
    }
    if config.batch_size == 0 || config.batch_size > n {
        return Err(TrainError::Config(format!(
            "batch size {} must lie in [1, {n}]",
            config.batch_size
        )));
    }
    if config.epochs == 0 {
        return Err(TrainError::Config("need at least one epoch".into()));
    }
    let steps_per_epoch = n.div_ceil(config.batch_size) as u64;
    let total_steps = config.epochs as u64 * steps_per_epoch;
    if config.budget.steps != total_steps {
        return Err(TrainError::Config(format!(
            "budget accounts for {} steps but epochs x ceil(N/B) = {total_steps}",
            config.budget.steps
        )));
    }
    let q = config.batch_size as f64 / n as f64;
    if (config.budget.q - q).abs() > 1e-9 * q {
        return Err(TrainError::Config(format!(
            "budget sampling rate {} does not match B/N = {q}",
            config.budget.q
        )));
    }
    if let ThresholdStrategy::Percentile { p } = config.clip.strategy {
        if !(p > 0.0 && p < 1.0) {
            return Err(TrainError::Config(format!(
                "percentile must lie in (0, 1), got {p}"
            )));
        }
    }
    if config.clip.strategy != ThresholdStrategy::Static && !config.budget.sigma_h.is_finite() {
        return Err(TrainError::Config(
            "dynamic strategies need a finite histogram noise multiplier".into(),
        ));
    }

    let input_dim = train_examples[0].features.len();
    let arch = match config.hidden_dim {
        None => Architecture::logistic(input_dim, dataset.classes),
        Some(h) => Architecture::mlp(input_dim, h, dataset.classes),
    };
    let dim = arch.param_count();

    // The noise the gradients actually receive: the full multiplier when no
    // histogram is released, the split share otherwise.
    let sigma_t = match config.clip.strategy {
        ThresholdStrategy::Static => config.budget.sigma,
        _ => config.budget.sigma_t,
    };

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::random_init(arch, &mut rng);
    let mut opt_state = OptState::new(dim);
    let mut clip_state = config.clip;

    let base_curve: RdpCurve = sgm_curve(
        config.budget.q,
        config.budget.sigma,
        &crate::accountant::default_orders(),
    )?;
    let eps_at = |steps: u64| -> Result<f64, TrainError> {
        Ok(rdp_to_dp(&compose(&base_curve, steps), config.budget.delta)?.0)
    };

    let mut rows = Vec::with_capacity(total_steps as usize);
    let mut eps_spent = 0.0;
    for t in 0..total_steps {
        let batch = poisson_sample(n, q, &mut rng);

        let mut grads: Vec<GradientVector> = Vec::with_capacity(batch.len());
        let mut norms: Vec<f64> = Vec::with_capacity(batch.len());
        let mut loss_sum = 0.0;
        for &i in &batch {
            let (loss, grad) = loss_and_gradient(&params, train_examples[i])?;
            loss_sum += loss;
            norms.push(l2_norm(&grad));
            grads.push(grad);
        }
        let train_loss = if batch.is_empty() {
            f64::NAN
        } else {
            loss_sum / batch.len() as f64
        };
        if !batch.is_empty() && !train_loss.is_finite() {
            return Err(TrainError::Diverged {
                iteration: t,
                loss: train_loss,
            });
        }
        let unclipped_fraction = if batch.is_empty() {
            f64::NAN
        } else {
            norms.iter().filter(|&&x| x <= clip_state.c).count() as f64 / batch.len() as f64
        };

        let (c_in_force, r_in_force) = (clip_state.c, clip_state.r);
        dp_step(
            &mut params,
            &grads,
            clip_state.c,
            sigma_t,
            config.batch_size as f64,
            config.learning_rate,
            &config.optimizer,
            &mut opt_state,
            &mut rng,
        );

        let (variance_term, bias_term) = match clip_state.strategy {
            ThresholdStrategy::Static => (f64::NAN, f64::NAN),
            ThresholdStrategy::Percentile { p } => {
                let hist = build_histogram(
                    &norms,
                    clip_state.r,
                    config.bins,
                    config.budget.sigma_h,
                    &mut rng,
                )?;
                clip_state = percentile_threshold(&hist, p, &clip_state)?;
                (f64::NAN, f64::NAN)
            }
            ThresholdStrategy::ExpectedError => {
                let hist = build_histogram(
                    &norms,
                    clip_state.r,
                    config.bins,
                    config.budget.sigma_h,
                    &mut rng,
                )?;
                let (next, estimate) = error_minimizing_threshold_with_estimate(
                    &hist,
                    &clip_state,
                    sigma_t,
                    config.batch_size as f64,
                    dim,
                )?;
                clip_state = next;
                match estimate {
                    Some(e) => (e.variance, e.bias),
                    None => (f64::NAN, f64::NAN),
                }
            }
        };

        if t % EPSILON_CHECKPOINT_EVERY == 0 || t + 1 == total_steps {
            eps_spent = eps_at(t + 1)?;
        }
        rows.push(IterationRow {
            t,
            c: c_in_force,
            r: r_in_force,
            batch_size: batch.len(),
            train_loss,
            variance_term,
            bias_term,
            eps_spent,
            unclipped_fraction,
        });
    }

    let final_accuracy = params.accuracy(dataset.test_examples());
    let realized_epsilon = rows.last().map(|r| r.eps_spent).unwrap_or(0.0);
    Ok((
        params,
        RunMetrics {
            rows,
            final_accuracy,
            realized_epsilon,
        },
    ))
}
