//! Linear softmax classifier shared by the per-pixel unary model and the
//! region confidence model, trained with full-batch gradient descent under
//! a decaying learning rate.

use crate::error::{Error, Result};
use crate::schedule::LrSchedule;

/// Loss trace of one training run. `recorded` holds (iteration, loss)
/// samples every 50 steps, which the descent property suites inspect.
#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub recorded: Vec<(usize, f64)>,
}

pub const LOSS_RECORD_EVERY: usize = 50;

/// Smallest probability fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// All model inputs live in [0, 1]; shifting them to [-0.5, 0.5] before the
/// linear map keeps zero-initialized descent symmetric between classes, so
/// the small pinned learning rates converge to usable decision boundaries.
pub const INPUT_CENTER: f64 = 0.5;

/// Fixed preprocessing gain on the centered inputs. The feature scale is
/// fractions of a unit while the schedules hand out a total step mass of a
/// few tenths, so without this gain a from-scratch linear model cannot
/// reach confident softmax outputs within one training run.
pub const INPUT_GAIN: f64 = 10.0;

/// Heavy-ball momentum shared by every training loop:
/// v <- MOMENTUM * v - lr * grad, params += v.
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    classes: usize,
    dim: usize,
    /// Row-major `classes x dim` weight matrix.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearSoftmax {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// Class probabilities for one feature vector.
    #[inline]
    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.classes);
        let mut max = f64::NEG_INFINITY;
        for c in 0..self.classes {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            let mut z = self.bias[c];
            for (w, v) in row.iter().zip(x) {
                z += w * (INPUT_GAIN * (v - INPUT_CENTER));
            }
            out[c] = z;
            if z > max {
                max = z;
            }
        }
        let mut sum = 0.0;
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, xs: &[&[f64]], ys: &[u8]) -> f64 {
        let mut probs = vec![0.0; self.classes];
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            self.predict_into(x, &mut probs);
            total -= probs[y as usize].max(PROB_FLOOR).ln();
        }
        total / xs.len() as f64
    }

    /// Mean cross-entropy and its gradient with respect to weights and bias.
    pub fn loss_and_grad(
        &self,
        xs: &[&[f64]],
        ys: &[u8],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> f64 {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        let mut probs = vec![0.0; self.classes];
        let mut total = 0.0;
        let scale = 1.0 / xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            self.predict_into(x, &mut probs);
            total -= probs[y as usize].max(PROB_FLOOR).ln();
            for c in 0..self.classes {
                let delta = (probs[c] - if c == y as usize { 1.0 } else { 0.0 }) * scale;
                grad_b[c] += delta;
                let row = &mut grad_w[c * self.dim..(c + 1) * self.dim];
                for (g, v) in row.iter_mut().zip(*x) {
                    *g += delta * (INPUT_GAIN * (v - INPUT_CENTER));
                }
            }
        }
        total * scale
    }

    /// Full-batch gradient descent from the current parameters.
    pub fn fit(&self, xs: &[&[f64]], ys: &[u8], schedule: &LrSchedule) -> Result<(Self, TrainStats)> {
        assert_eq!(xs.len(), ys.len());
        if xs.is_empty() {
            return Err(Error::NoTrainablePixels);
        }
        let mut model = self.clone();
        let mut grad_w = vec![0.0; model.weights.len()];
        let mut grad_b = vec![0.0; model.bias.len()];
        let mut vel_w = vec![0.0; model.weights.len()];
        let mut vel_b = vec![0.0; model.bias.len()];
        let mut stats = TrainStats::default();
        let steps = schedule.max_iters();
        for k in 0..steps {
            let loss = model.loss_and_grad(xs, ys, &mut grad_w, &mut grad_b);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    stage: "softmax",
                    step: k,
                    loss,
                });
            }
            if k == 0 {
                stats.initial_loss = loss;
            }
            if k % LOSS_RECORD_EVERY == 0 {
                stats.recorded.push((k, loss));
            }
            let lr = schedule.lr_at(k)?;
            for ((w, g), v) in model.weights.iter_mut().zip(&grad_w).zip(vel_w.iter_mut()) {
                *v = MOMENTUM * *v - lr * g;
                *w += *v;
            }
            for ((b, g), v) in model.bias.iter_mut().zip(&grad_b).zip(vel_b.iter_mut()) {
                *v = MOMENTUM * *v - lr * g;
                *b += *v;
            }
        }
        stats.final_loss = model.loss(xs, ys);
        stats.steps = steps;
        if !stats.final_loss.is_finite() {
            return Err(Error::Divergence {
                stage: "softmax",
                step: steps,
                loss: stats.final_loss,
            });
        }
        Ok((model, stats))
    }

    /// Flatten parameters as (name, value) pairs for the CSV format.
    pub fn named_floats(&self, prefix: &str) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(self.weights.len() + self.bias.len());
        for c in 0..self.classes {
            for d in 0..self.dim {
                out.push((format!("{prefix}_w_{c}_{d}"), self.weights[c * self.dim + d]));
            }
        }
        for c in 0..self.classes {
            out.push((format!("{prefix}_b_{c}"), self.bias[c]));
        }
        out
    }

    /// Rebuild from (name, value) pairs produced by `named_floats`.
    pub fn from_named_floats(
        prefix: &str,
        classes: usize,
        dim: usize,
        pairs: &[(String, f64)],
    ) -> Result<Self> {
        let mut model = Self::zeros(classes, dim);
        let mut seen = 0usize;
        for (name, value) in pairs {
            let Some(rest) = name.strip_prefix(prefix) else {
                continue;
            };
            if let Some(idx) = rest.strip_prefix("_w_") {
                let mut it = idx.split('_');
                let c: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::MalformedParams(name.clone()))?;
                let d: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::MalformedParams(name.clone()))?;
                if c >= classes || d >= dim {
                    return Err(Error::MalformedParams(name.clone()));
                }
                model.weights[c * dim + d] = *value;
                seen += 1;
            } else if let Some(idx) = rest.strip_prefix("_b_") {
                let c: usize = idx
                    .parse()
                    .map_err(|_| Error::MalformedParams(name.clone()))?;
                if c >= classes {
                    return Err(Error::MalformedParams(name.clone()));
                }
                model.bias[c] = *value;
                seen += 1;
            }
        }
        if seen != classes * dim + classes {
            return Err(Error::MalformedParams(format!(
                "expected {} entries with prefix {prefix}, found {seen}",
                classes * dim + classes
            )));
        }
        Ok(model)
    }
}
