//! Two-layer fully connected network without biases.
//!
//! ```text
//! preact = d^{-1/2} · X · W0ᵀ        (n × h)
//! hidden = (a/β) · ln(1 + e^{β·preact})
//! output = h^{-1/2} · hidden · W1ᵀ   (n × c)
//! ```
//!
//! Samples are rows. Both weight blocks live in one flat vector (`W0` then
//! `W1`, row-major) so optimizers can treat the parameters as a single slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    sigmoid, softplus, GaussHermite, MatRef, Matrix, QuadratureError, SeededRng, ShapeError,
};

/// Nodes used for the deterministic gain calibration.
pub const CALIBRATION_ORDER: usize = 200;
/// Maximum relative gap between the quadrature and Monte Carlo gains.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;
/// Smallest Monte Carlo sample count accepted by [`calibrate_gain`].
pub const MIN_MC_SAMPLES: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite value in {stage}")]
    NonFinite { stage: &'static str },
    #[error("input has {got} columns, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("activation beta must be positive and finite, got {0}")]
    Beta(f64),
    #[error("Monte Carlo calibration needs at least {MIN_MC_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error(
        "quadrature gain {quadrature} and Monte Carlo gain {monte_carlo} differ by {gap:.3e} (relative)"
    )]
    Disagreement {
        quadrature: f64,
        monte_carlo: f64,
        gap: f64,
    },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden,
            classes,
        }
    }

    pub fn w0_len(&self) -> usize {
        self.hidden * self.input
    }

    pub fn w1_len(&self) -> usize {
        self.classes * self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.w0_len() + self.w1_len()
    }
}

/// Scaled softplus `σ(x) = (a/β) ln(1 + e^{βx})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub beta: f64,
    pub gain: f64,
}

impl ActivationSpec {
    pub fn new(beta: f64, gain: f64) -> Self {
        Self { beta, gain }
    }

    /// Gain fixed by quadrature so that `a² E[softplus_β(Z)²] = 1`.
    pub fn calibrated(beta: f64) -> Result<Self, CalibrationError> {
        let m2 = quadrature_second_moment(beta)?;
        Ok(Self {
            beta,
            gain: m2.sqrt().recip(),
        })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.gain / self.beta * softplus(self.beta * x)
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        self.gain * sigmoid(self.beta * x)
    }
}

/// `E[(softplus(βZ)/β)²]` by Gauss–Hermite quadrature.
fn quadrature_second_moment(beta: f64) -> Result<f64, CalibrationError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CalibrationError::Beta(beta));
    }
    let unit = ActivationSpec::new(beta, 1.0);
    Ok(GaussHermite::new(CALIBRATION_ORDER)?.expectation(|z| unit.apply(z).powi(2))?)
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub spec: ActivationSpec,
    pub monte_carlo_gain: f64,
    pub samples: usize,
    pub relative_gap: f64,
}

/// Calibrates the activation gain by quadrature and cross-checks it against
/// a Monte Carlo estimate drawn from `rng`.
pub fn calibrate_gain(
    beta: f64,
    mc_samples: usize,
    rng: &mut SeededRng,
) -> Result<Calibration, CalibrationError> {
    let spec = ActivationSpec::calibrated(beta)?;
    if mc_samples < MIN_MC_SAMPLES {
        return Err(CalibrationError::TooFewSamples(mc_samples));
    }
    let unit = ActivationSpec::new(beta, 1.0);
    let mut sum = 0.0;
    for _ in 0..mc_samples {
        sum += unit.apply(rng.normal()).powi(2);
    }
    let monte_carlo_gain = (sum / mc_samples as f64).sqrt().recip();
    let relative_gap = (spec.gain - monte_carlo_gain).abs() / spec.gain;
    if relative_gap > CALIBRATION_TOLERANCE {
        return Err(CalibrationError::Disagreement {
            quadrature: spec.gain,
            monte_carlo: monte_carlo_gain,
            gap: relative_gap,
        });
    }
    Ok(Calibration {
        spec,
        monte_carlo_gain,
        samples: mc_samples,
        relative_gap,
    })
}

/// Network weights `θ = (W0, W1)` stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    theta: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradient = ModelParams;

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            theta: vec![0.0; dims.param_count()],
        }
    }

    /// Standard Gaussian initialization: `W0` is drawn first, then `W1`.
    pub fn init(dims: ModelDims, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(dims);
        rng.fill_normal(&mut p.theta);
        p
    }

    pub fn from_blocks(w0: &Matrix, w1: &Matrix) -> Result<Self, ModelError> {
        let dims = ModelDims::new(w0.cols(), w0.rows(), w1.rows());
        if w1.cols() != w0.rows() {
            return Err(ShapeError::Mismatch {
                op: "from_blocks",
                left: w0.shape(),
                right: w1.shape(),
            }
            .into());
        }
        let mut theta = Vec::with_capacity(dims.param_count());
        theta.extend_from_slice(w0.data());
        theta.extend_from_slice(w1.data());
        Ok(Self { dims, theta })
    }

    pub fn from_flat(dims: ModelDims, theta: Vec<f64>) -> Result<Self, ModelError> {
        if theta.len() != dims.param_count() {
            return Err(ModelError::Contract(format!(
                "flat parameter vector has {} entries, dims need {}",
                theta.len(),
                dims.param_count()
            )));
        }
        Ok(Self { dims, theta })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    /// `W0`, `h x d`.
    pub fn w0(&self) -> MatRef<'_> {
        MatRef::row_major(
            &self.theta[..self.dims.w0_len()],
            self.dims.hidden,
            self.dims.input,
        )
    }

    /// `W1`, `c x h`.
    pub fn w1(&self) -> MatRef<'_> {
        MatRef::row_major(
            &self.theta[self.dims.w0_len()..],
            self.dims.classes,
            self.dims.hidden,
        )
    }

    pub fn w0_mut(&mut self) -> &mut [f64] {
        let k = self.dims.w0_len();
        &mut self.theta[..k]
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let k = self.dims.w0_len();
        &mut self.theta[k..]
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub preact: Matrix,
    pub hidden: Matrix,
    pub output: Matrix,
}

fn check_input(params: &ModelParams, inputs: &Matrix) -> Result<(), ModelError> {
    if inputs.cols() != params.dims.input {
        return Err(ModelError::InputDim {
            expected: params.dims.input,
            got: inputs.cols(),
        });
    }
    Ok(())
}

/// First-layer preactivations `d^{-1/2} X W0ᵀ`.
pub fn preactivations(params: &ModelParams, inputs: &Matrix) -> Result<Matrix, ModelError> {
    check_input(params, inputs)?;
    let scale = (params.dims.input as f64).sqrt().recip();
    Ok(inputs.view().matmul_scaled(params.w0().t(), scale)?)
}

pub fn forward(
    params: &ModelParams,
    spec: &ActivationSpec,
    inputs: &Matrix,
) -> Result<ForwardTrace, ModelError> {
    let preact = preactivations(params, inputs)?;
    if !preact.all_finite() {
        return Err(ModelError::NonFinite {
            stage: "preactivation",
        });
    }
    let hidden = preact.map(|x| spec.apply(x));
    if !hidden.all_finite() {
        return Err(ModelError::NonFinite { stage: "hidden" });
    }
    let scale = (params.dims.hidden as f64).sqrt().recip();
    let output = hidden.view().matmul_scaled(params.w1().t(), scale)?;
    if !output.all_finite() {
        return Err(ModelError::NonFinite { stage: "output" });
    }
    Ok(ForwardTrace {
        preact,
        hidden,
        output,
    })
}

/// Chain rule through the network for an upstream gradient `dL/df` (`n x c`).
pub fn backward(
    params: &ModelParams,
    spec: &ActivationSpec,
    inputs: &Matrix,
    trace: &ForwardTrace,
    dl_df: &Matrix,
) -> Result<Gradient, ModelError> {
    check_input(params, inputs)?;
    let dims = params.dims;
    let n = inputs.rows();
    if dl_df.shape() != (n, dims.classes)
        || trace.preact.shape() != (n, dims.hidden)
        || trace.hidden.shape() != (n, dims.hidden)
    {
        return Err(ModelError::Contract(format!(
            "backward: inputs {:?}, preact {:?}, hidden {:?}, dL/df {:?} inconsistent with dims {:?}",
            inputs.shape(),
            trace.preact.shape(),
            trace.hidden.shape(),
            dl_df.shape(),
            dims
        )));
    }
    let inv_sqrt_h = (dims.hidden as f64).sqrt().recip();
    let inv_sqrt_d = (dims.input as f64).sqrt().recip();

    let d_w1 = dl_df.t().matmul_scaled(trace.hidden.view(), inv_sqrt_h)?;
    let mut d_pre = dl_df.view().matmul_scaled(params.w1(), inv_sqrt_h)?;
    for (g, &z) in d_pre.data_mut().iter_mut().zip(trace.preact.data()) {
        *g *= spec.derivative(z);
    }
    let d_w0 = d_pre.t().matmul_scaled(inputs.view(), inv_sqrt_d)?;
    ModelParams::from_blocks(&d_w0, &d_w1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_matrix;

    fn tiny(w0: f64, w1: f64) -> ModelParams {
        ModelParams::from_blocks(
            &Matrix::from_vec(1, 1, vec![w0]).unwrap(),
            &Matrix::from_vec(1, 1, vec![w1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_scalar_network() {
        let spec = ActivationSpec::new(5.0, 1.0);
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let t = forward(&tiny(2.0, 3.0), &spec, &x).unwrap();
        assert_eq!(t.preact.get(0, 0), 2.0);
        let z = (1.0 + 10f64.exp()).ln() / 5.0;
        assert!((t.hidden.get(0, 0) - z).abs() < 1e-15);
        assert!((t.hidden.get(0, 0) - 2.0000091).abs() < 1e-7);
        assert!((t.output.get(0, 0) - 6.0000272).abs() < 1e-7);
    }

    #[test]
    fn zero_first_layer_gives_constant_hidden() {
        let dims = ModelDims::new(4, 3, 2);
        let mut rng = SeededRng::new(1);
        let mut p = ModelParams::init(dims, &mut rng);
        p.w0_mut().fill(0.0);
        let spec = ActivationSpec::new(5.0, 1.3);
        let x = gaussian_matrix(&mut rng, 6, 4);
        let t = forward(&p, &spec, &x).unwrap();
        let expected = 1.3 * std::f64::consts::LN_2 / 5.0;
        assert!(t.preact.data().iter().all(|&v| v == 0.0));
        assert!(t.hidden.data().iter().all(|&v| (v - expected).abs() < 1e-15));
        for k in 0..2 {
            let want = (0..3).map(|j| p.w1().get(k, j)).sum::<f64>() * expected / 3f64.sqrt();
            for r in 0..6 {
                assert!((t.output.get(r, k) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_preactivation_does_not_overflow() {
        let spec = ActivationSpec::new(5.0, 1.2);
        assert_eq!(spec.apply(1000.0), 1.2 * 1000.0);
        assert!(spec.apply(1e6).is_finite());
        assert!(spec.apply(-1e6) >= 0.0);
    }

    #[test]
    fn backward_of_zero_upstream_is_zero() {
        let dims = ModelDims::new(3, 4, 2);
        let mut rng = SeededRng::new(2);
        let p = ModelParams::init(dims, &mut rng);
        let x = gaussian_matrix(&mut rng, 5, 3);
        let spec = ActivationSpec::new(5.0, 1.4);
        let t = forward(&p, &spec, &x).unwrap();
        let g = backward(&p, &spec, &x, &t, &Matrix::zeros(5, 2)).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let dims = ModelDims::new(3, 4, 2);
        let mut rng = SeededRng::new(3);
        let p = ModelParams::init(dims, &mut rng);
        let x = gaussian_matrix(&mut rng, 5, 3);
        let spec = ActivationSpec::new(5.0, 1.4);
        let t = forward(&p, &spec, &x).unwrap();
        let up = gaussian_matrix(&mut rng, 5, 2);
        let g1 = backward(&p, &spec, &x, &t, &up).unwrap();
        let g2 = backward(&p, &spec, &x, &t, &up.scale(2.0)).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let dims = ModelDims::new(3, 4, 2);
        let mut rng = SeededRng::new(4);
        let p = ModelParams::init(dims, &mut rng);
        let x = gaussian_matrix(&mut rng, 5, 3);
        let spec = ActivationSpec::new(5.0, 1.4);
        let t = forward(&p, &spec, &x).unwrap();
        assert!(matches!(
            backward(&p, &spec, &x, &t, &Matrix::zeros(4, 2)),
            Err(ModelError::Contract(_))
        ));
        assert!(matches!(
            forward(&p, &spec, &Matrix::zeros(5, 2)),
            Err(ModelError::InputDim { .. })
        ));
    }

    #[test]
    fn last_layer_homogeneity() {
        let dims = ModelDims::new(3, 4, 2);
        let mut rng = SeededRng::new(5);
        let p = ModelParams::init(dims, &mut rng);
        let x = gaussian_matrix(&mut rng, 5, 3);
        let spec = ActivationSpec::new(5.0, 1.4);
        let mut q = p.clone();
        q.w1_mut().iter_mut().for_each(|w| *w *= 4.0);
        let a = forward(&p, &spec, &x).unwrap().output;
        let b = forward(&q, &spec, &x).unwrap().output;
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(4.0 * u, *v);
        }
    }

    #[test]
    fn relu_limit_gain() {
        let spec = ActivationSpec::calibrated(1e6).unwrap();
        assert!(
            (spec.gain - std::f64::consts::SQRT_2).abs() < 1e-4,
            "{}",
            spec.gain
        );
    }

    #[test]
    fn quadrature_gain_is_seed_independent() {
        let a = calibrate_gain(5.0, MIN_MC_SAMPLES, &mut SeededRng::new(1)).unwrap();
        let b = calibrate_gain(5.0, MIN_MC_SAMPLES, &mut SeededRng::new(2)).unwrap();
        assert_eq!(a.spec.gain.to_bits(), b.spec.gain.to_bits());
        assert_ne!(a.monte_carlo_gain, b.monte_carlo_gain);
    }

    #[test]
    fn calibration_rejects_bad_inputs() {
        assert!(matches!(
            ActivationSpec::calibrated(0.0),
            Err(CalibrationError::Beta(_))
        ));
        assert!(matches!(
            ActivationSpec::calibrated(-1.0),
            Err(CalibrationError::Beta(_))
        ));
        assert!(matches!(
            calibrate_gain(5.0, 10, &mut SeededRng::new(0)),
            Err(CalibrationError::TooFewSamples(10))
        ));
    }
}
