//! Two-dimensional toy densities, built as in the FFJORD corpus.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Eight equal-weight Gaussians (std 0.5) on the compass points of a radius-4
/// circle, then shrunk by 1.414.
pub fn eight_gaussians<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let centers = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (r, r), (r, -r), (-r, r), (-r, -r)];
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        let (cx, cy) = centers[rng.random_range(0..8)];
        row[0] = (0.5 * a + 4.0 * cx) / 1.414;
        row[1] = (0.5 * b + 4.0 * cy) / 1.414;
    }
    out
}

/// Uniform over the dark squares of a 4×4 board of side-2 squares covering
/// `[−4, 4]²`.
pub fn checkerboard<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let x1 = rng.random::<f64>() * 4.0 - 2.0;
        let x2 = rng.random::<f64>() - 2.0 * rng.random_range(0..2) as f64;
        let x2 = x2 + x1.floor().rem_euclid(2.0);
        row[0] = 2.0 * x1;
        row[1] = 2.0 * x2;
    }
    out
}

/// Whether `(x, y)` lies on a square the checkerboard never samples.
pub fn checkerboard_forbidden(x: f64, y: f64) -> bool {
    ((x / 2.0).floor() + (y / 2.0).floor()).rem_euclid(2.0) != 0.0
}
