//! Dominant Hessian eigenvalue by power iteration on finite-difference
//! Hessian-vector products.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{backward, forward, ActivationSpec, ModelParams};
use crate::numerics::SeededRng;
use crate::objective::{scaled_objective, LossSpec, ObjectiveContext};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessOptions {
    pub max_iterations: usize,
    /// Stop once successive Rayleigh quotients differ by less than this (relative).
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SharpnessOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessEstimate {
    pub lambda_max: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out before the quotient settled.
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Power iteration on `v ↦ H v`, where `H v ≈ (∇L(θ + h v) − ∇L(θ − h v)) / 2h`.
///
/// Returns the eigenvalue of largest magnitude. The step `h` follows the
/// usual cube-root rule scaled by the size of `theta`.
pub fn power_iteration<E>(
    theta: &[f64],
    mut gradient: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    options: &SharpnessOptions,
) -> Result<SharpnessEstimate, E> {
    let n = theta.len();
    let rms = if n == 0 {
        0.0
    } else {
        norm(theta) / (n as f64).sqrt()
    };
    let h = f64::EPSILON.cbrt() * rms.max(1.0);

    let mut rng = SeededRng::new(options.seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let scale = norm(&v).recip();
    v.iter_mut().for_each(|x| *x *= scale);

    let mut probe = vec![0.0; n];
    let mut lambda = 0.0;
    for iteration in 1..=options.max_iterations {
        for ((p, &t), &d) in probe.iter_mut().zip(theta).zip(&v) {
            *p = t + h * d;
        }
        let plus = gradient(&probe)?;
        for ((p, &t), &d) in probe.iter_mut().zip(theta).zip(&v) {
            *p = t - h * d;
        }
        let minus = gradient(&probe)?;
        let hv: Vec<f64> = plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();

        let next = dot(&v, &hv);
        let size = norm(&hv);
        if size == 0.0 {
            return Ok(SharpnessEstimate {
                lambda_max: 0.0,
                iterations: iteration,
                converged: true,
            });
        }
        v = hv.iter().map(|x| x / size).collect();
        if iteration > 1 && (next - lambda).abs() <= options.tolerance * next.abs() {
            return Ok(SharpnessEstimate {
                lambda_max: next,
                iterations: iteration,
                converged: true,
            });
        }
        lambda = next;
    }
    Ok(SharpnessEstimate {
        lambda_max: lambda,
        iterations: options.max_iterations,
        converged: false,
    })
}

/// Flat gradient of the scaled training objective at `theta`.
pub fn training_loss_gradient(
    theta: &ModelParams,
    spec: &ActivationSpec,
    data: &Dataset,
    ctx: &ObjectiveContext,
    loss: &LossSpec,
) -> Result<Vec<f64>, TrainError> {
    let trace = forward(theta, spec, &data.inputs)?;
    let objective = scaled_objective(&trace.output, ctx, &data.labels, loss)?;
    Ok(backward(theta, spec, &data.inputs, &trace, &objective.dl_df)?.into_vec())
}

/// Sharpness of the scaled training objective at `params`.
pub fn estimate_sharpness(
    params: &ModelParams,
    spec: &ActivationSpec,
    data: &Dataset,
    ctx: &ObjectiveContext,
    loss: &LossSpec,
    options: &SharpnessOptions,
) -> Result<SharpnessEstimate, TrainError> {
    let dims = params.dims();
    power_iteration(
        params.as_slice(),
        |theta| {
            let p = ModelParams::from_flat(dims, theta.to_vec())?;
            training_loss_gradient(&p, spec, data, ctx, loss)
        },
        options,
    )
}
