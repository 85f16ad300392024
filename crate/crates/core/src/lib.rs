//! Output scaling and adaptive learning rates for a two-layer network.
//!
//! The crate trains a bias-free softplus network on the objective
//! `1/(α² n) Σ ℓ(α (f − f₀), y)` with gradient descent, RMSProp, and
//! variants of RMSProp and Adam whose second moment sees `α G`, and sweeps
//! the (learning rate, scaling factor) plane.

pub mod data;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod optimizers;
