//! Full-batch step rules.
//!
//! | rule               | accumulator                       | update                         |
//! |--------------------|-----------------------------------|--------------------------------|
//! | gradient descent   | –                                 | θ ← θ − η G                    |
//! | RMSProp            | v ← ρ v + (1−ρ) G²                | θ ← θ − η G / (√v + ε)         |
//! | modified RMSProp   | v ← ρ v + (1−ρ) (α G)²            | θ ← θ − η G / (√v + ε)         |
//! | modified Adam      | m ← β₁ m + (1−β₁) G, v as above   | θ ← θ − η m̂ / (√v̂ + ε)         |
//!
//! The accumulator is updated before it is used. Under the scaled objective
//! the raw gradient is O(α⁻¹), so folding α back into the second moment makes
//! `v` and the effective learning rate `η/(√v + ε)` independent of α.
//!
//! Steps are transactional: if any updated value is non-finite, neither the
//! parameters nor the state change and the diagnostics report divergence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("parameter length {params} does not match gradient length {grad}")]
    GradientShape { params: usize, grad: usize },
    #[error("optimizer state holds {state} entries for {params} parameters")]
    StateShape { params: usize, state: usize },
    #[error("invalid hyper-parameter {name} = {value}")]
    Hyper { name: &'static str, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    Rmsprop,
    ModifiedRmsprop,
    ModifiedAdam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Gd,
        OptimizerKind::Rmsprop,
        OptimizerKind::ModifiedRmsprop,
        OptimizerKind::ModifiedAdam,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::ModifiedRmsprop => "modified_rmsprop",
            OptimizerKind::ModifiedAdam => "modified_adam",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown optimizer '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub eta: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Scaling factor folded into the second moment by the modified rules.
    pub alpha: f64,
}

impl OptimizerHyper {
    pub fn new(eta: f64, alpha: f64) -> Self {
        Self {
            eta,
            rho: 0.999,
            epsilon: 1e-8,
            alpha,
        }
    }

    /// `eta = 0` is accepted so that frozen runs can be constructed.
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |name, value| Err(OptimizerError::Hyper { name, value });
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", self.eta);
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho", self.rho);
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", self.epsilon);
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub bias_correction: bool,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            bias_correction: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub v: Vec<f64>,
    pub m: Option<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            v: vec![0.0; len],
            m: None,
            t: 0,
        }
    }

    pub fn with_momentum(len: usize) -> Self {
        Self {
            v: vec![0.0; len],
            m: Some(vec![0.0; len]),
            t: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// Per-parameter multiplier applied to the gradient (`η` for GD).
    pub effective_lr: Vec<f64>,
    pub update_norm: f64,
    pub grad_norm: f64,
    /// Set when the proposed update was non-finite and has been discarded.
    pub diverged: bool,
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_lengths(theta: &[f64], grad: &[f64]) -> Result<(), OptimizerError> {
    if theta.len() != grad.len() {
        return Err(OptimizerError::GradientShape {
            params: theta.len(),
            grad: grad.len(),
        });
    }
    Ok(())
}

pub fn gd_step(
    theta: &mut [f64],
    grad: &[f64],
    hyper: &OptimizerHyper,
) -> Result<StepDiagnostics, OptimizerError> {
    check_lengths(theta, grad)?;
    hyper.validate()?;
    let eta = hyper.eta;
    let next: Vec<f64> = theta.iter().zip(grad).map(|(&p, &g)| p - eta * g).collect();
    let diverged = next.iter().any(|x| !x.is_finite());
    let update_norm = eta * l2(grad);
    if !diverged {
        theta.copy_from_slice(&next);
    }
    Ok(StepDiagnostics {
        effective_lr: vec![eta; theta.len()],
        update_norm,
        grad_norm: l2(grad),
        diverged,
    })
}

pub fn rmsprop_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    hyper: &OptimizerHyper,
) -> Result<StepDiagnostics, OptimizerError> {
    adaptive_step(theta, grad, state, hyper, 1.0)
}

pub fn modified_rmsprop_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    hyper: &OptimizerHyper,
) -> Result<StepDiagnostics, OptimizerError> {
    adaptive_step(theta, grad, state, hyper, hyper.alpha)
}

/// Shared RMSProp recursion with the second-moment gradient multiplied by `fold`.
fn adaptive_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    hyper: &OptimizerHyper,
    fold: f64,
) -> Result<StepDiagnostics, OptimizerError> {
    check_lengths(theta, grad)?;
    hyper.validate()?;
    if state.v.len() != theta.len() {
        return Err(OptimizerError::StateShape {
            params: theta.len(),
            state: state.v.len(),
        });
    }
    let OptimizerHyper {
        eta, rho, epsilon, ..
    } = *hyper;
    let n = theta.len();
    let mut next_v = Vec::with_capacity(n);
    let mut next_theta = Vec::with_capacity(n);
    let mut effective_lr = Vec::with_capacity(n);
    let mut update_sq = 0.0;
    for i in 0..n {
        let g = grad[i];
        let folded = fold * g;
        let v = rho * state.v[i] + (1.0 - rho) * (folded * folded);
        let lr = eta / (v.sqrt() + epsilon);
        let delta = lr * g;
        update_sq += delta * delta;
        next_v.push(v);
        effective_lr.push(lr);
        next_theta.push(theta[i] - delta);
    }
    let diverged = next_theta.iter().chain(&next_v).any(|x| !x.is_finite());
    if !diverged {
        theta.copy_from_slice(&next_theta);
        state.v = next_v;
        state.t += 1;
    }
    Ok(StepDiagnostics {
        effective_lr,
        update_norm: update_sq.sqrt(),
        grad_norm: l2(grad),
        diverged,
    })
}

/// Adam with the α-folded second moment; the first moment is not folded.
pub fn modified_adam_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    hyper: &OptimizerHyper,
    adam: &AdamHyper,
) -> Result<StepDiagnostics, OptimizerError> {
    check_lengths(theta, grad)?;
    hyper.validate()?;
    if !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) {
        return Err(OptimizerError::Hyper {
            name: "beta1",
            value: adam.beta1,
        });
    }
    let n = theta.len();
    let m_len = state.m.as_ref().map_or(n, Vec::len);
    if state.v.len() != n || m_len != n {
        return Err(OptimizerError::StateShape {
            params: n,
            state: state.v.len().min(m_len),
        });
    }
    let OptimizerHyper {
        eta,
        rho,
        epsilon,
        alpha,
    } = *hyper;
    let t = state.t + 1;
    let (m_correction, v_correction) = if adam.bias_correction {
        (1.0 - adam.beta1.powi(t as i32), 1.0 - rho.powi(t as i32))
    } else {
        (1.0, 1.0)
    };
    let zeros;
    let m_prev: &[f64] = match &state.m {
        Some(m) => m,
        None => {
            zeros = vec![0.0; n];
            &zeros
        }
    };
    let mut next_m = Vec::with_capacity(n);
    let mut next_v = Vec::with_capacity(n);
    let mut next_theta = Vec::with_capacity(n);
    let mut effective_lr = Vec::with_capacity(n);
    let mut update_sq = 0.0;
    for i in 0..n {
        let g = grad[i];
        let folded = alpha * g;
        let m = adam.beta1 * m_prev[i] + (1.0 - adam.beta1) * g;
        let v = rho * state.v[i] + (1.0 - rho) * (folded * folded);
        let lr = eta / ((v / v_correction).sqrt() + epsilon);
        let delta = lr * (m / m_correction);
        update_sq += delta * delta;
        next_m.push(m);
        next_v.push(v);
        effective_lr.push(lr);
        next_theta.push(theta[i] - delta);
    }
    let diverged = next_theta
        .iter()
        .chain(&next_v)
        .chain(&next_m)
        .any(|x| !x.is_finite());
    if !diverged {
        theta.copy_from_slice(&next_theta);
        state.v = next_v;
        state.m = Some(next_m);
        state.t = t;
    }
    Ok(StepDiagnostics {
        effective_lr,
        update_norm: update_sq.sqrt(),
        grad_norm: l2(grad),
        diverged,
    })
}

/// A configured optimizer together with its running state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: OptimizerHyper,
    pub adam: AdamHyper,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        hyper: OptimizerHyper,
        adam: AdamHyper,
        len: usize,
    ) -> Result<Self, OptimizerError> {
        hyper.validate()?;
        let state = match kind {
            OptimizerKind::ModifiedAdam => OptimizerState::with_momentum(len),
            _ => OptimizerState::new(len),
        };
        Ok(Self {
            kind,
            hyper,
            adam,
            state,
        })
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<StepDiagnostics, OptimizerError> {
        match self.kind {
            OptimizerKind::Gd => {
                let d = gd_step(theta, grad, &self.hyper)?;
                if !d.diverged {
                    self.state.t += 1;
                }
                Ok(d)
            }
            OptimizerKind::Rmsprop => rmsprop_step(theta, grad, &mut self.state, &self.hyper),
            OptimizerKind::ModifiedRmsprop => {
                modified_rmsprop_step(theta, grad, &mut self.state, &self.hyper)
            }
            OptimizerKind::ModifiedAdam => {
                modified_adam_step(theta, grad, &mut self.state, &self.hyper, &self.adam)
            }
        }
    }
}

/// Effective learning rate `η/(√v_t + ε)` for a scalar parameter fed the
/// constant gradient `G = g/α` (the O(α⁻¹) gradient of the scaled objective).
///
/// With `folded = false` this is original RMSProp; with `folded = true` the
/// accumulator sees `α G = g` and the profile does not depend on α.
pub fn effective_lr_profile(
    gradient_magnitude: f64,
    hyper: &OptimizerHyper,
    steps: usize,
    folded: bool,
) -> Vec<f64> {
    let g = gradient_magnitude / hyper.alpha;
    let seen = if folded { hyper.alpha * g } else { g };
    let mut v = 0.0;
    (0..steps)
        .map(|_| {
            v = hyper.rho * v + (1.0 - hyper.rho) * seen * seen;
            hyper.eta / (v.sqrt() + hyper.epsilon)
        })
        .collect()
}

/// The scaling factor at which `√v_t = ε` for unfolded RMSProp under a
/// constant gradient `g/α` after `t` steps: `α* = √(1 − ρᵗ) g / ε`.
/// As `t → ∞` this tends to `g / ε`.
pub fn critical_alpha(gradient_magnitude: f64, rho: f64, epsilon: f64, t: Option<u64>) -> f64 {
    let fill = t.map_or(1.0, |t| 1.0 - rho.powf(t as f64));
    fill.sqrt() * gradient_magnitude / epsilon
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(eta: f64, alpha: f64) -> OptimizerHyper {
        OptimizerHyper::new(eta, alpha)
    }

    #[test]
    fn gd_definition_and_fixed_point() {
        let mut theta = [1.0];
        let d = gd_step(&mut theta, &[0.5], &hyper(0.1, 1.0)).unwrap();
        assert!((theta[0] - 0.95).abs() < 1e-16);
        assert_eq!(d.effective_lr, vec![0.1]);
        let mut theta = [1.25];
        gd_step(&mut theta, &[0.0], &hyper(0.1, 1.0)).unwrap();
        assert_eq!(theta[0], 1.25);
    }

    #[test]
    fn gd_on_unstable_quadratic_grows() {
        let (lambda, eta) = (4.0, 0.6);
        let mut theta = [1.0];
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = [lambda * theta[0]];
            gd_step(&mut theta, &g, &hyper(eta, 1.0)).unwrap();
            assert!(theta[0].abs() > prev.abs());
            prev = theta[0];
        }
    }

    #[test]
    fn rmsprop_first_step() {
        let mut theta = [0.0];
        let mut state = OptimizerState::new(1);
        rmsprop_step(&mut theta, &[0.5], &mut state, &hyper(0.01, 1.0)).unwrap();
        assert!((state.v[0] - 2.5e-4).abs() < 1e-18);
        let expected = -0.01 * 0.5 / (2.5e-4f64.sqrt() + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!((theta[0] + 0.3162276).abs() < 1e-7);
        assert_eq!(state.t, 1);

        let mut state10 = OptimizerState::new(1);
        rmsprop_step(&mut [0.0], &[0.05], &mut state10, &hyper(0.01, 10.0)).unwrap();
        assert!((state10.v[0] - 2.5e-6).abs() <= 1e-12 * 2.5e-6);
    }

    #[test]
    fn rmsprop_zero_gradient_from_rest() {
        let mut theta = [0.7];
        let mut state = OptimizerState::new(1);
        rmsprop_step(&mut theta, &[0.0], &mut state, &hyper(0.01, 1.0)).unwrap();
        assert_eq!(theta[0], 0.7);
    }

    #[test]
    fn modified_rmsprop_folds_alpha() {
        let mut theta = [0.0];
        let mut state = OptimizerState::new(1);
        let d = modified_rmsprop_step(&mut theta, &[0.005], &mut state, &hyper(0.01, 100.0)).unwrap();
        assert!((state.v[0] - 2.5e-4).abs() < 1e-16);
        let expected = -0.01 * 0.005 / (2.5e-4f64.sqrt() + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-17);
        assert!((theta[0] + 3.162276e-3).abs() < 1e-9);

        let mut base = [0.0];
        rmsprop_step(&mut base, &[0.5], &mut OptimizerState::new(1), &hyper(0.01, 1.0)).unwrap();
        assert!((theta[0] * 100.0 - base[0]).abs() < 1e-14);
        assert!(d.effective_lr[0] > 0.0);
    }

    #[test]
    fn modified_effective_lr_is_alpha_free() {
        let g1 = 0.37;
        let lr = |alpha: f64| {
            let mut state = OptimizerState::new(1);
            modified_rmsprop_step(&mut [0.0], &[g1 / alpha], &mut state, &hyper(0.1, alpha))
                .unwrap()
                .effective_lr[0]
        };
        let base = lr(1.0);
        for alpha in [1e-3, 1e3] {
            assert!((lr(alpha) - base).abs() <= 1e-12 * base);
        }
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut theta = [0.0];
        let mut state = OptimizerState::with_momentum(1);
        modified_adam_step(
            &mut theta,
            &[0.5],
            &mut state,
            &hyper(0.01, 1.0),
            &AdamHyper::default(),
        )
        .unwrap();
        let expected = -0.01 * 0.5 / (0.5 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-16);
        assert!((theta[0] + 0.0099999998).abs() < 1e-10);
    }

    #[test]
    fn adam_first_step_is_sign_times_eta() {
        for g in [1e-3, -3.0, 250.0] {
            let mut theta = [0.0];
            let mut state = OptimizerState::with_momentum(1);
            modified_adam_step(
                &mut theta,
                &[g],
                &mut state,
                &hyper(0.01, 1.0),
                &AdamHyper::default(),
            )
            .unwrap();
            assert!((theta[0] + 0.01 * g.signum()).abs() < 1e-4 * 0.01);
        }
    }

    #[test]
    fn adam_without_momentum_is_modified_rmsprop() {
        let grads = [[0.3, -0.1, 2.0], [0.0, 0.5, -1.0], [1e-4, 1e3, -7.0]];
        let h = hyper(0.05, 3.0);
        let adam = AdamHyper {
            beta1: 0.0,
            bias_correction: false,
        };
        let mut a = [0.1, 0.2, 0.3];
        let mut b = a;
        let mut sa = OptimizerState::with_momentum(3);
        let mut sb = OptimizerState::new(3);
        for g in &grads {
            modified_adam_step(&mut a, g, &mut sa, &h, &adam).unwrap();
            modified_rmsprop_step(&mut b, g, &mut sb, &h).unwrap();
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
            assert_eq!(sa.v, sb.v);
        }
    }

    #[test]
    fn nonfinite_update_is_rejected() {
        let mut theta = [1.0, 2.0];
        let mut state = OptimizerState::new(2);
        let d = rmsprop_step(&mut theta, &[f64::NAN, 1.0], &mut state, &hyper(0.1, 1.0)).unwrap();
        assert!(d.diverged);
        assert_eq!(theta, [1.0, 2.0]);
        assert_eq!(state, OptimizerState::new(2));

        let d = gd_step(&mut theta, &[f64::MAX, 0.0], &hyper(1e10, 1.0)).unwrap();
        assert!(d.diverged);
        assert_eq!(theta, [1.0, 2.0]);
    }

    #[test]
    fn shape_and_hyper_errors() {
        let mut theta = [0.0; 2];
        assert!(matches!(
            gd_step(&mut theta, &[1.0], &hyper(0.1, 1.0)),
            Err(OptimizerError::GradientShape { .. })
        ));
        assert!(matches!(
            rmsprop_step(
                &mut theta,
                &[1.0, 1.0],
                &mut OptimizerState::new(3),
                &hyper(0.1, 1.0)
            ),
            Err(OptimizerError::StateShape { .. })
        ));
        let mut h = hyper(0.1, 1.0);
        h.rho = 1.0;
        assert!(h.validate().is_err());
        assert!(hyper(0.1, 0.0).validate().is_err());
        assert!(hyper(-0.1, 1.0).validate().is_err());
    }

    #[test]
    fn profile_limits() {
        let g = 1e-6;
        let h_small = hyper(0.1, 1e-3);
        let h_large = hyper(0.1, 1e3);
        let a = effective_lr_profile(g, &h_small, 500, true);
        let b = effective_lr_profile(g, &h_large, 500, true);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x);
        }
        let far = effective_lr_profile(g, &hyper(0.1, 1e12), 100, false);
        let limit = 0.1 / 1e-8;
        assert!(far.iter().all(|&lr| lr <= limit && lr > 0.999 * limit));
    }

    #[test]
    fn kind_round_trips_through_names() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
        assert!("adam".parse::<OptimizerKind>().is_err());
    }
}
