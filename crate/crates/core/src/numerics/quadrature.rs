//! Gauss–Hermite quadrature for expectations under a standard normal.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature order must be at least 2, got {0}")]
    Order(usize),
    #[error("integrand is not finite at node z = {node} (value {value})")]
    UnstableIntegrand { node: f64, value: f64 },
    #[error("bracketed {found} positive Hermite roots, expected {expected}")]
    RootNotConverged { found: usize, expected: usize },
}

/// Nodes and weights such that `E[g(Z)] ≈ Σ w_i g(z_i)` for `Z ~ N(0, 1)`.
///
/// Weights sum to one. The rule is exact for polynomials of degree
/// `2 * order - 1`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self, QuadratureError> {
        if order < 2 {
            return Err(QuadratureError::Order(order));
        }
        let (x, w) = physicists_rule(order)?;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let sqrt2 = std::f64::consts::SQRT_2;
        // reorder ascending so summation order does not depend on root search
        let mut pairs: Vec<(f64, f64)> = x
            .iter()
            .zip(&w)
            .map(|(&xi, &wi)| (xi * sqrt2, wi * inv_sqrt_pi))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expectation(&self, g: impl Fn(f64) -> f64) -> Result<f64, QuadratureError> {
        let mut total = 0.0;
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            let value = g(z);
            if !value.is_finite() {
                return Err(QuadratureError::UnstableIntegrand { node: z, value });
            }
            total += w * value;
        }
        Ok(total)
    }
}

/// `E[g(Z)]`, `Z ~ N(0,1)`, by an `order`-point Gauss–Hermite rule.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64, order: usize) -> Result<f64, QuadratureError> {
    GaussHermite::new(order)?.expectation(g)
}

/// Roots and weights for the weight function `exp(-x^2)`.
///
/// The positive roots of the orthonormal Hermite polynomial are bracketed
/// on a grid finer than the smallest root spacing (about `π/√(2n+1)`, at
/// the centre), then bisected to full precision.
fn physicists_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>), QuadratureError> {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^{-1/4}
    let nf = n as f64;
    let half = n / 2;
    let spacing = std::f64::consts::PI / (2.0 * nf + 1.0).sqrt();
    let h = 0.05 * spacing;
    let z_max = (2.0 * nf + 1.0).sqrt() + 1.0;

    let mut roots = Vec::with_capacity(half);
    let mut lo = 0.5 * h;
    let mut f_lo = orthonormal_hermite(n, lo, PIM4).0;
    while lo < z_max && roots.len() < half {
        let hi = lo + h;
        let f_hi = orthonormal_hermite(n, hi, PIM4).0;
        if f_lo == 0.0 || f_lo.signum() != f_hi.signum() {
            roots.push(bisect(n, lo, hi, f_lo, PIM4));
        }
        lo = hi;
        f_lo = f_hi;
    }
    if roots.len() != half {
        return Err(QuadratureError::RootNotConverged {
            found: roots.len(),
            expected: half,
        });
    }

    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let weight = |z: f64| {
        let pp = (2.0 * nf).sqrt() * orthonormal_hermite(n, z, PIM4).1;
        2.0 / (pp * pp)
    };
    for &z in roots.iter().rev() {
        x.push(-z);
        w.push(weight(z));
    }
    if n % 2 == 1 {
        x.push(0.0);
        w.push(weight(0.0));
    }
    for &z in &roots {
        x.push(z);
        w.push(weight(z));
    }
    Ok((x, w))
}

fn bisect(n: usize, mut lo: f64, mut hi: f64, mut f_lo: f64, p0: f64) -> f64 {
    if f_lo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = orthonormal_hermite(n, mid, p0).0;
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Returns (p_n(z), p_{n-1}(z)) of the orthonormal Hermite recurrence.
fn orthonormal_hermite(n: usize, z: f64, p0: f64) -> (f64, f64) {
    let mut p1 = p0;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}
