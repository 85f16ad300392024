use crate::model::{preactivations, ModelError, ModelParams};
use crate::numerics::Matrix;

/// Index of the largest entry; ties go to the lowest index and NaN never wins.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Top-1 accuracy against ±1 one-vs-all labels.
pub fn accuracy(outputs: &Matrix, labels: &Matrix) -> f64 {
    assert_eq!(outputs.shape(), labels.shape(), "accuracy: shape mismatch");
    if outputs.rows() == 0 {
        return 0.0;
    }
    let correct = outputs
        .iter_rows()
        .zip(labels.iter_rows())
        .filter(|(o, l)| argmax(o) == argmax(l))
        .count();
    correct as f64 / outputs.rows() as f64
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0) || (a == 0.0 && b == 0.0)
}

/// Fraction of (sample, neuron) preactivations whose sign is unchanged
/// between `theta0` and `theta`. Zero only agrees with zero.
pub fn hidden_consistency(
    theta0: &ModelParams,
    theta: &ModelParams,
    eval_inputs: &Matrix,
) -> Result<f64, ModelError> {
    if theta0.dims() != theta.dims() {
        return Err(ModelError::Contract(format!(
            "consistency: dims {:?} vs {:?}",
            theta0.dims(),
            theta.dims()
        )));
    }
    let before = preactivations(theta0, eval_inputs)?;
    let after = preactivations(theta, eval_inputs)?;
    let total = before.data().len();
    if total == 0 {
        return Ok(1.0);
    }
    let agree = before
        .data()
        .iter()
        .zip(after.data())
        .filter(|(&a, &b)| same_sign(a, b))
        .count();
    Ok(agree as f64 / total as f64)
}

pub fn detect_divergence(loss: f64, threshold: f64) -> bool {
    !loss.is_finite() || loss > threshold
}

/// True iff every parameter is bitwise identical to its initial value.
pub fn detect_frozen(theta0: &ModelParams, theta: &ModelParams) -> bool {
    theta0.dims() == theta.dims()
        && theta0
            .as_slice()
            .iter()
            .zip(theta.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits())
}
