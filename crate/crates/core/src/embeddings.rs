//! Gaussian embedding tables: initialisation, projection and sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Smallest admissible variance entry.
pub const SIGMA_MIN: f64 = 1e-6;
/// Standard deviation of the mean initialisation.
pub const INIT_STD: f64 = 0.01;
/// Default initial variance.
pub const SIGMA_INIT: f64 = 0.1;

/// Row-major `n × h` mean and diagonal-variance matrices for one entity type.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTable {
    n: usize,
    h: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianTable {
    /// A table of zeros, used as a gradient buffer.
    pub fn zeros(n: usize, h: usize) -> Self {
        GaussianTable {
            n,
            h,
            mu: vec![0.0; n * h],
            sigma: vec![0.0; n * h],
        }
    }

    pub fn from_parts(n: usize, h: usize, mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        assert_eq!(mu.len(), n * h, "mean matrix shape");
        assert_eq!(sigma.len(), n * h, "variance matrix shape");
        GaussianTable { n, h, mu, sigma }
    }

    /// μ ~ N(0, 0.01²) elementwise, σ = `sigma_init`, then projected.
    pub fn init(n: usize, h: usize, seed: u64, sigma_init: f64) -> Self {
        Self::init_with(n, h, &mut ChaCha8Rng::seed_from_u64(seed), INIT_STD, sigma_init)
    }

    pub fn init_with<R: Rng + ?Sized>(n: usize, h: usize, rng: &mut R, std: f64, sigma_init: f64) -> Self {
        assert!(h >= 1, "latent dimension must be positive");
        let normal = Normal::new(0.0, std).expect("finite std");
        let mu = (0..n * h).map(|_| normal.sample(rng)).collect();
        let mut table = GaussianTable {
            n,
            h,
            mu,
            sigma: vec![sigma_init; n * h],
        };
        table.project();
        table
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.h
    }

    pub fn mu_row(&self, i: usize) -> &[f64] {
        &self.mu[i * self.h..(i + 1) * self.h]
    }

    pub fn sigma_row(&self, i: usize) -> &[f64] {
        &self.sigma[i * self.h..(i + 1) * self.h]
    }

    pub fn mu_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.mu[i * self.h..(i + 1) * self.h]
    }

    pub fn sigma_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.sigma[i * self.h..(i + 1) * self.h]
    }

    /// Elementwise √σ, computed once per batch.
    pub fn sqrt_sigma(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s.max(0.0).sqrt()).collect()
    }

    /// Project every row back into the feasible set.
    pub fn project(&mut self) {
        let h = self.h;
        for (mu, sigma) in self.mu.chunks_mut(h).zip(self.sigma.chunks_mut(h)) {
            project_mean(mu);
            project_variance(sigma);
        }
    }

    /// Reparameterised draw `μ + √σ ⊙ ε` for one row.
    pub fn sample<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> SampledEmbedding {
        let noise: Vec<f64> = (0..self.h).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(index, noise)
    }

    pub fn sample_with_noise(&self, index: usize, noise: Vec<f64>) -> SampledEmbedding {
        assert_eq!(noise.len(), self.h, "dimension mismatch");
        let value = self
            .mu_row(index)
            .iter()
            .zip(self.sigma_row(index))
            .zip(&noise)
            .map(|((m, s), e)| m + s.sqrt() * e)
            .collect();
        SampledEmbedding { value, noise }
    }

    /// Checks the feasibility invariants; returns the first violation.
    pub fn check_invariants(&self, tol: f64) -> Result<(), String> {
        for i in 0..self.n {
            let (mu, sigma) = (self.mu_row(i), self.sigma_row(i));
            if mu.iter().chain(sigma).any(|x| !x.is_finite()) {
                return Err(format!("row {i}: non-finite entry"));
            }
            if norm(mu) > 1.0 + tol {
                return Err(format!("row {i}: ‖μ‖ = {}", norm(mu)));
            }
            if norm(sigma) > 1.0 + tol {
                return Err(format!("row {i}: ‖σ‖ = {}", norm(sigma)));
            }
            if let Some(s) = sigma.iter().find(|&&s| !(SIGMA_MIN..=1.0).contains(&s)) {
                return Err(format!("row {i}: σ entry {s} outside [σ_min, 1]"));
            }
        }
        Ok(())
    }
}

/// A draw from a Gaussian embedding together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEmbedding {
    pub value: Vec<f64>,
    pub noise: Vec<f64>,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project_mean(mu: &mut [f64]) {
    let n = norm(mu);
    if n > 1.0 {
        mu.iter_mut().for_each(|x| *x /= n);
    }
}

/// Clamp to `[σ_min, 1]`, then pull the norm down to 1. Entries that would
/// fall below σ_min while rescaling are pinned there and the remaining
/// entries absorb the rest of the budget.
fn project_variance(sigma: &mut [f64]) {
    for s in sigma.iter_mut() {
        *s = if s.is_nan() { SIGMA_MIN } else { s.clamp(SIGMA_MIN, 1.0) };
    }
    if norm(sigma) <= 1.0 {
        return;
    }
    let mut pinned = vec![false; sigma.len()];
    loop {
        let pinned_sq = pinned.iter().filter(|&&p| p).count() as f64 * SIGMA_MIN * SIGMA_MIN;
        let free_sq: f64 = sigma
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| !p)
            .map(|(s, _)| s * s)
            .sum();
        let scale = ((1.0 - pinned_sq) / free_sq).sqrt();
        let mut newly_pinned = false;
        for (s, p) in sigma.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                continue;
            }
            let scaled = *s * scale;
            if scaled < SIGMA_MIN {
                *s = SIGMA_MIN;
                *p = true;
                newly_pinned = true;
            }
        }
        if !newly_pinned {
            for (s, p) in sigma.iter_mut().zip(&pinned) {
                if !*p {
                    *s *= scale;
                }
            }
            return;
        }
    }
}

/// The trainable embedding parameters Θ: one table for users, one for items.
///
/// The same type doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub users: GaussianTable,
    pub items: GaussianTable,
}

impl Theta {
    pub fn init(n_users: usize, n_items: usize, h: usize, rng: &mut ChaCha8Rng, sigma_init: f64) -> Self {
        Self::init_with_std(n_users, n_items, h, rng, INIT_STD, sigma_init)
    }

    pub fn init_with_std(n_users: usize, n_items: usize, h: usize, rng: &mut ChaCha8Rng, std: f64, sigma_init: f64) -> Self {
        let users = GaussianTable::init_with(n_users, h, rng, std, sigma_init);
        let items = GaussianTable::init_with(n_items, h, rng, std, sigma_init);
        Theta { users, items }
    }

    pub fn zeros_like(&self) -> Self {
        Theta {
            users: GaussianTable::zeros(self.users.len(), self.users.dim()),
            items: GaussianTable::zeros(self.items.len(), self.items.dim()),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    pub fn project(&mut self) {
        self.users.project();
        self.items.project();
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.users.mu, &self.users.sigma, &self.items.mu, &self.items.sigma]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.users.mu,
            &mut self.users.sigma,
            &mut self.items.mu,
            &mut self.items.sigma,
        ]
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &Theta) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
        }
    }

    pub fn dot(&self, other: &Theta) -> f64 {
        self.slices()
            .into_iter()
            .zip(other.slices())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Clamp variances to σ_min without the norm projection. The proxy Θ̃ is
    /// never projected, but its √σ must stay defined.
    pub(crate) fn floor_variances(&mut self) {
        for s in self.users.sigma.iter_mut().chain(self.items.sigma.iter_mut()) {
            if *s < SIGMA_MIN {
                *s = SIGMA_MIN;
            }
        }
    }
}
