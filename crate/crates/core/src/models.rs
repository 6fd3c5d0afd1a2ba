//! Small differentiable classifiers with exact per-example gradients.
//!
//! Parameters live in one flat vector so clipping and noising can treat the
//! whole model as a single point in R^d. Two architectures are enough to
//! exercise private training end to end: multinomial logistic regression
//! and a one-hidden-layer tanh MLP.

use rand::Rng;
use thiserror::Error;

/// Dense per-example gradient, same layout as the flat parameter vector.
pub type GradientVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {got} does not match model input dimension {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// One labeled training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Layer shape of a classifier: logistic regression when `hidden_dim` is
/// absent, otherwise a single tanh hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: Option<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: None,
            classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: Some(hidden_dim),
            classes,
        }
    }

    /// Total parameter count of the flat vector.
    pub fn param_count(&self) -> usize {
        match self.hidden_dim {
            None => self.classes * (self.input_dim + 1),
            Some(h) => h * (self.input_dim + 1) + self.classes * (h + 1),
        }
    }
}

/// Flat parameter vector plus its architecture.
///
/// Layout: `[W (out x in, row major), b (out)]` per layer, hidden layer
/// first when present.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

impl ModelParams {
    /// Initialize every layer uniformly on (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn random_init<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let mut theta = Vec::with_capacity(arch.param_count());
        let mut fill = |count: usize, fan_in: usize, theta: &mut Vec<f64>| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..count {
                theta.push(rng.gen_range(-a..a));
            }
        };
        match arch.hidden_dim {
            None => fill(
                arch.classes * (arch.input_dim + 1),
                arch.input_dim,
                &mut theta,
            ),
            Some(h) => {
                fill(h * (arch.input_dim + 1), arch.input_dim, &mut theta);
                fill(arch.classes * (h + 1), h, &mut theta);
            }
        }
        Self { arch, theta }
    }

    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            theta: vec![0.0; arch.param_count()],
        }
    }

    fn check_example(&self, example: &Example) -> Result<(), ModelError> {
        if example.features.len() != self.arch.input_dim {
            return Err(ModelError::FeatureMismatch {
                expected: self.arch.input_dim,
                got: example.features.len(),
            });
        }
        if example.label >= self.arch.classes {
            return Err(ModelError::LabelOutOfRange {
                label: example.label,
                classes: self.arch.classes,
            });
        }
        Ok(())
    }

    /// Class logits for one feature vector.
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        match self.arch.hidden_dim {
            None => affine(&self.theta, 0, self.arch.classes, features),
            Some(h) => {
                let mut hidden = affine(&self.theta, 0, h, features);
                for v in &mut hidden {
                    *v = v.tanh();
                }
                let offset = h * (self.arch.input_dim + 1);
                affine(&self.theta[offset..], 0, self.arch.classes, &hidden)
            }
        }
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        let logits = self.logits(features);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    /// Fraction of examples whose argmax logit matches the label.
    pub fn accuracy<'a, I: IntoIterator<Item = &'a Example>>(&self, examples: I) -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for ex in examples {
            total += 1;
            if self.predict(&ex.features) == ex.label {
                correct += 1;
            }
        }
        if total == 0 {
            return 0.0;
        }
        correct as f64 / total as f64
    }
}

/// `W x + b` where W is `rows x len(x)` row-major starting at `offset`,
/// followed immediately by b.
fn affine(theta: &[f64], offset: usize, rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let bias_at = offset + rows * cols;
    (0..rows)
        .map(|r| {
            let row = &theta[offset + r * cols..offset + (r + 1) * cols];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            dot + theta[bias_at + r]
        })
        .collect()
}

/// Softmax probabilities and the log normalizer, computed stably.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (probs, max + sum.ln())
}

/// Cross-entropy of the softmax prediction against the example's label.
pub fn loss(params: &ModelParams, example: &Example) -> Result<f64, ModelError> {
    params.check_example(example)?;
    let logits = params.logits(&example.features);
    let (_, log_z) = softmax(&logits);
    Ok(log_z - logits[example.label])
}

/// Exact gradient of [`loss`] with respect to the flat parameter vector.
pub fn per_example_gradient(
    params: &ModelParams,
    example: &Example,
) -> Result<GradientVector, ModelError> {
    Ok(loss_and_gradient(params, example)?.1)
}

/// Loss and gradient in one pass; the trainer uses this to avoid a second
/// forward evaluation.
pub fn loss_and_gradient(
    params: &ModelParams,
    example: &Example,
) -> Result<(f64, GradientVector), ModelError> {
    params.check_example(example)?;
    let arch = params.arch;
    let x = &example.features;
    let mut grad = vec![0.0; arch.param_count()];

    match arch.hidden_dim {
        None => {
            let logits = params.logits(x);
            let (probs, log_z) = softmax(&logits);
            let loss = log_z - logits[example.label];
            // dL/dW = (p - onehot(y)) outer x, dL/db = p - onehot(y)
            let cols = arch.input_dim;
            let bias_at = arch.classes * cols;
            for k in 0..arch.classes {
                let resid = probs[k] - if k == example.label { 1.0 } else { 0.0 };
                for (j, &xj) in x.iter().enumerate() {
                    grad[k * cols + j] = resid * xj;
                }
                grad[bias_at + k] = resid;
            }
            Ok((loss, grad))
        }
        Some(h) => {
            let pre = affine(&params.theta, 0, h, x);
            let act: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
            let l2_offset = h * (arch.input_dim + 1);
            let logits = affine(&params.theta[l2_offset..], 0, arch.classes, &act);
            let (probs, log_z) = softmax(&logits);
            let loss = log_z - logits[example.label];

            let cols2 = h;
            let bias2_at = l2_offset + arch.classes * cols2;
            let mut back = vec![0.0; h];
            for k in 0..arch.classes {
                let resid = probs[k] - if k == example.label { 1.0 } else { 0.0 };
                for (j, &aj) in act.iter().enumerate() {
                    grad[l2_offset + k * cols2 + j] = resid * aj;
                    back[j] += resid * params.theta[l2_offset + k * cols2 + j];
                }
                grad[bias2_at + k] = resid;
            }

            let cols1 = arch.input_dim;
            let bias1_at = h * cols1;
            for j in 0..h {
                let delta = back[j] * (1.0 - act[j] * act[j]);
                for (i, &xi) in x.iter().enumerate() {
                    grad[j * cols1 + i] = delta * xi;
                }
                grad[bias1_at + j] = delta;
            }
            Ok((loss, grad))
        }
    }
}
