//! Squared distances between embeddings and their analytic gradients.
//!
//! For diagonal Gaussians `N(μa, diag σa)` and `N(μb, diag σb)` the squared
//! 2-Wasserstein distance has the closed form
//!
//! ```text
//! W2² = ‖μa − μb‖² + ‖√σa − √σb‖²
//! ```
//!
//! which is O(h). The Euclidean kind ignores σ and is used by the
//! deterministic-embedding ablations.

use std::fmt;
use std::str::FromStr;

use crate::embeddings::SIGMA_MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    W2Squared,
    EuclideanSquared,
}

impl DistanceKind {
    /// Whether σ takes part in the distance (and therefore in sampling).
    pub fn is_gaussian(self) -> bool {
        matches!(self, DistanceKind::W2Squared)
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::W2Squared => "w2",
            DistanceKind::EuclideanSquared => "euclidean",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "w2" | "w2_squared" | "w2-squared" | "wasserstein" => Ok(DistanceKind::W2Squared),
            "euclidean" | "euclidean_squared" | "euclidean-squared" => Ok(DistanceKind::EuclideanSquared),
            other => Err(format!("unknown distance kind `{other}`")),
        }
    }
}

pub fn euclidean_squared(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn w2_squared(mu_a: &[f64], sigma_a: &[f64], mu_b: &[f64], sigma_b: &[f64]) -> f64 {
    let h = mu_a.len();
    assert!(
        sigma_a.len() == h && mu_b.len() == h && sigma_b.len() == h,
        "dimension mismatch"
    );
    let mut total = 0.0;
    for d in 0..h {
        debug_assert!(sigma_a[d] >= 0.0 && sigma_b[d] >= 0.0, "negative variance");
        let dm = mu_a[d] - mu_b[d];
        let ds = sigma_a[d].sqrt() - sigma_b[d].sqrt();
        total += dm * dm + ds * ds;
    }
    total
}

/// Same as [`w2_squared`] with the square roots of σ supplied by the caller.
#[inline]
pub fn w2_squared_sqrt(mu_a: &[f64], sqrt_a: &[f64], mu_b: &[f64], sqrt_b: &[f64]) -> f64 {
    let mut total = 0.0;
    for d in 0..mu_a.len() {
        let dm = mu_a[d] - mu_b[d];
        let ds = sqrt_a[d] - sqrt_b[d];
        total += dm * dm + ds * ds;
    }
    total
}

/// Gradients of [`w2_squared`] with respect to its four arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct W2Grad {
    pub mu_a: Vec<f64>,
    pub sigma_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
}

pub fn w2_squared_grad(mu_a: &[f64], sigma_a: &[f64], mu_b: &[f64], sigma_b: &[f64]) -> W2Grad {
    let h = mu_a.len();
    assert!(
        sigma_a.len() == h && mu_b.len() == h && sigma_b.len() == h,
        "dimension mismatch"
    );
    let mut g = W2Grad {
        mu_a: vec![0.0; h],
        sigma_a: vec![0.0; h],
        mu_b: vec![0.0; h],
        sigma_b: vec![0.0; h],
    };
    for d in 0..h {
        assert!(
            sigma_a[d] >= SIGMA_MIN && sigma_b[d] >= SIGMA_MIN,
            "variance below σ_min"
        );
        let dm = mu_a[d] - mu_b[d];
        g.mu_a[d] = 2.0 * dm;
        g.mu_b[d] = -2.0 * dm;
        let (ra, rb) = (sigma_a[d].sqrt(), sigma_b[d].sqrt());
        g.sigma_a[d] = 1.0 - rb / ra;
        g.sigma_b[d] = 1.0 - ra / rb;
    }
    g
}

/// Accumulate `scale · ∂d/∂(a, b)` into the four gradient rows, using
/// precomputed square roots. Used by the batch losses.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn accumulate_grad(
    kind: DistanceKind,
    scale: f64,
    mu_a: &[f64],
    sqrt_a: &[f64],
    mu_b: &[f64],
    sqrt_b: &[f64],
    g_mu_a: &mut [f64],
    g_sigma_a: &mut [f64],
    g_mu_b: &mut [f64],
    g_sigma_b: &mut [f64],
) {
    for d in 0..mu_a.len() {
        let dm = 2.0 * scale * (mu_a[d] - mu_b[d]);
        g_mu_a[d] += dm;
        g_mu_b[d] -= dm;
    }
    if kind.is_gaussian() {
        for d in 0..mu_a.len() {
            let (ra, rb) = (sqrt_a[d], sqrt_b[d]);
            g_sigma_a[d] += scale * (1.0 - rb / ra);
            g_sigma_b[d] += scale * (1.0 - ra / rb);
        }
    }
}
