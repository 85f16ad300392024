//! Soft hinge loss and the scaled, shifted training objective
//!
//! ```text
//! L(θ) = 1/(α² n) Σ_samples Σ_classes ℓ(α (f(θ, x) − f(θ₀, x)), y)
//! ℓ(u, y) = (1/β) ln(1 + e^{β (1 − u y)})
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{sigmoid, softplus, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("objective shapes disagree: output {output:?}, initial {initial:?}, labels {labels:?}")]
    Shape {
        output: (usize, usize),
        initial: (usize, usize),
        labels: (usize, usize),
    },
    #[error("scaling factor must be positive and finite, got {0}")]
    Alpha(f64),
    #[error("loss is not finite ({0})")]
    NonFinite(f64),
}

/// Reduction across the per-class hinge terms of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAggregation {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub beta: f64,
    pub aggregation: ClassAggregation,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            beta: 20.0,
            aggregation: ClassAggregation::Sum,
        }
    }
}

/// `(ℓ, ∂ℓ/∂f)` for one output coordinate.
#[inline]
pub fn soft_hinge(f: f64, y: f64, beta: f64) -> (f64, f64) {
    let margin = beta * (1.0 - f * y);
    (softplus(margin) / beta, -y * sigmoid(margin))
}

/// The scaling factor and the frozen initial prediction of one training run.
#[derive(Clone, Debug)]
pub struct ObjectiveContext {
    alpha: f64,
    initial_output: Matrix,
}

impl ObjectiveContext {
    pub fn capture(alpha: f64, initial_output: Matrix) -> Result<Self, ObjectiveError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ObjectiveError::Alpha(alpha));
        }
        Ok(Self {
            alpha,
            initial_output,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn initial_output(&self) -> &Matrix {
        &self.initial_output
    }

    pub fn samples(&self) -> usize {
        self.initial_output.rows()
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveValue {
    pub loss: f64,
    /// Gradient with respect to the raw output `f`.
    pub dl_df: Matrix,
}

/// Loss value only; the gradient buffer is not built.
pub fn scaled_loss(
    output: &Matrix,
    ctx: &ObjectiveContext,
    labels: &Matrix,
    spec: &LossSpec,
) -> Result<f64, ObjectiveError> {
    check_shapes(output, ctx, labels)?;
    let alpha = ctx.alpha;
    let mut total = 0.0;
    for ((&f, &f0), &y) in output
        .data()
        .iter()
        .zip(ctx.initial_output.data())
        .zip(labels.data())
    {
        total += soft_hinge(alpha * (f - f0), y, spec.beta).0;
    }
    let loss = total * loss_prefactor(ctx, labels.cols(), spec);
    if !loss.is_finite() {
        return Err(ObjectiveError::NonFinite(loss));
    }
    Ok(loss)
}

pub fn scaled_objective(
    output: &Matrix,
    ctx: &ObjectiveContext,
    labels: &Matrix,
    spec: &LossSpec,
) -> Result<ObjectiveValue, ObjectiveError> {
    check_shapes(output, ctx, labels)?;
    let alpha = ctx.alpha;
    let prefactor = loss_prefactor(ctx, labels.cols(), spec);
    // d/df [ℓ(α(f − f0))/(α² n)] = ℓ'/(α n)
    let grad_scale = prefactor * alpha;
    let mut total = 0.0;
    let mut dl_df = Matrix::zeros(output.rows(), output.cols());
    for (((&f, &f0), &y), g) in output
        .data()
        .iter()
        .zip(ctx.initial_output.data())
        .zip(labels.data())
        .zip(dl_df.data_mut())
    {
        let (l, dl) = soft_hinge(alpha * (f - f0), y, spec.beta);
        total += l;
        *g = dl * grad_scale;
    }
    let loss = total * prefactor;
    if !loss.is_finite() {
        return Err(ObjectiveError::NonFinite(loss));
    }
    Ok(ObjectiveValue { loss, dl_df })
}

fn loss_prefactor(ctx: &ObjectiveContext, classes: usize, spec: &LossSpec) -> f64 {
    let per_sample = match spec.aggregation {
        ClassAggregation::Sum => 1.0,
        ClassAggregation::Mean => 1.0 / classes as f64,
    };
    per_sample / (ctx.alpha * ctx.alpha * ctx.samples() as f64)
}

fn check_shapes(output: &Matrix, ctx: &ObjectiveContext, labels: &Matrix) -> Result<(), ObjectiveError> {
    if output.shape() != ctx.initial_output.shape() || output.shape() != labels.shape() {
        return Err(ObjectiveError::Shape {
            output: output.shape(),
            initial: ctx.initial_output.shape(),
            labels: labels.shape(),
        });
    }
    Ok(())
}
