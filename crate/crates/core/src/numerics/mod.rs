pub mod matrix;
pub mod quadrature;
pub mod rng;

pub use matrix::{MatRef, Matrix, ShapeError};
pub use quadrature::{gaussian_expectation, GaussHermite, QuadratureError};
pub use rng::{derive_seed, gaussian_matrix, SeededRng};

/// Overflow-safe `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Overflow-safe logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
