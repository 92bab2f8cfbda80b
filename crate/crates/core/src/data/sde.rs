//! Euler–Maruyama discretisations of the time-series generators. Every
//! generator returns `n × (T · channels)` with channels interleaved per time
//! step (`x₀, y₀, z₀, x₁, …`).

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrownianParams {
    pub t: usize,
    pub mu: f64,
    pub sigma: f64,
    /// Exponentiate the whole path.
    pub geometric: bool,
}

impl Default for BrownianParams {
    fn default() -> Self {
        Self { t: 30, mu: 0.0, sigma: 0.1, geometric: false }
    }
}

/// `x₀ ~ N(μ, σ²)`, `x_t ~ N(x_{t−1}, σ²)`.
pub fn brownian<R: Rng + ?Sized>(n: usize, p: &BrownianParams, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((n, p.t));
    for mut row in out.rows_mut() {
        let mut x = p.mu + p.sigma * normal(rng);
        for t in 0..p.t {
            if t > 0 {
                x += p.sigma * normal(rng);
            }
            row[t] = if p.geometric { x.exp() } else { x };
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuParams {
    pub t: usize,
    pub mu0: f64,
    pub sigma0: f64,
    pub sigma: f64,
    pub theta: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self { t: 30, mu0: 0.0, sigma0: 5.0, sigma: 0.5, theta: 0.8 }
    }
}

/// `x₀ ~ N(μ₀, σ₀²)`, `x_t ~ N(θ·x_{t−1}, σ²)`.
pub fn ornstein_uhlenbeck<R: Rng + ?Sized>(n: usize, p: &OuParams, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((n, p.t));
    for mut row in out.rows_mut() {
        let mut x = p.mu0 + p.sigma0 * normal(rng);
        row[0] = x;
        for t in 1..p.t {
            x = p.theta * x + p.sigma * normal(rng);
            row[t] = x;
        }
    }
    out
}

pub const LORENZ_PHI: f64 = 10.0;
pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzParams {
    pub t: usize,
    pub s: f64,
    pub sigma: f64,
    /// Fixed initial state instead of `N(0, I)`.
    pub start: Option<[f64; 3]>,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { t: 30, s: 0.02, sigma: 0.1, start: None }
    }
}

/// Mean of the next state given the current one.
pub fn lorenz_drift([x, y, z]: [f64; 3], s: f64) -> [f64; 3] {
    [
        x + s * (LORENZ_PHI * (y - x)),
        y + s * (x * (LORENZ_RHO - z) - y),
        z + s * (x * y - LORENZ_BETA * z),
    ]
}

pub fn lorenz<R: Rng + ?Sized>(n: usize, p: &LorenzParams, rng: &mut R) -> Array2<f64> {
    let noise = p.s.sqrt() * p.sigma;
    let mut out = Array2::zeros((n, 3 * p.t));
    for mut row in out.rows_mut() {
        let mut state = p.start.unwrap_or_else(|| [normal(rng), normal(rng), normal(rng)]);
        for t in 0..p.t {
            if t > 0 {
                let m = lorenz_drift(state, p.s);
                state = [m[0] + noise * normal(rng), m[1] + noise * normal(rng), m[2] + noise * normal(rng)];
            }
            for c in 0..3 {
                row[3 * t + c] = state[c];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdpParams {
    pub t: usize,
    pub s: f64,
    pub mu: f64,
    pub sigma: f64,
    pub start: Option<[f64; 2]>,
}

impl Default for VdpParams {
    fn default() -> Self {
        Self { t: 120, s: 0.05, mu: 1.0, sigma: 0.1, start: None }
    }
}

/// Mean of the next state. The velocity update has no `−x` restoring term;
/// this is the discrete recipe the experiments were run with.
pub fn vdp_drift([x, y]: [f64; 2], s: f64, mu: f64) -> [f64; 2] {
    [x + y * s, y + s * mu * (1.0 - x * x) * y]
}

pub fn van_der_pol<R: Rng + ?Sized>(n: usize, p: &VdpParams, rng: &mut R) -> Array2<f64> {
    let noise = p.s.sqrt() * p.sigma;
    let mut out = Array2::zeros((n, 2 * p.t));
    for mut row in out.rows_mut() {
        let mut state = p.start.unwrap_or_else(|| [normal(rng), normal(rng)]);
        for t in 0..p.t {
            if t > 0 {
                let m = vdp_drift(state, p.s, p.mu);
                state = [m[0] + noise * normal(rng), m[1] + noise * normal(rng)];
            }
            row[2 * t] = state[0];
            row[2 * t + 1] = state[1];
        }
    }
    out
}
