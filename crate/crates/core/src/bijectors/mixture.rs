//! Gaussian-mixture CDF transform `x = Φ⁻¹(Σ_k ρ_k Φ((y − μ_k)/σ_k))`.
//!
//! The `y → x` direction (density evaluation) is closed form. The `x → y`
//! direction (sampling) is solved numerically and carries no gradient.

use ndarray::Array2;

use crate::bijectors::{Bijector, ParamId, ParamStore, ParamVars};
use crate::error::{Error, Result};
use crate::numerics::roots::{self, Bracket, Root, Solver, DEFAULT_MAX_ITER};
use crate::numerics::{concat_cols, special, Var};

/// Doublings allowed when the initial bracket does not straddle the root.
pub const MAX_BRACKET_DOUBLINGS: usize = 10;

/// One coordinate's mixture: weights sum to one, stds positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(Error::Shape("mixture needs equal, non-zero component counts".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("mixture weights must be ≥ 0 and stds > 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("mixture weights sum to {total}")));
        }
        Ok(Self { weights, means, stds })
    }

    pub fn from_logits(logits: &[f64], means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let lse = special::logsumexp(logits.iter().copied());
        Self::new(logits.iter().map(|l| (l - lse).exp()).collect(), means, stds)
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&w, &m), &s)| (w, m, s))
    }

    /// `(F(y), 1 − F(y))`, each summed directly so neither cancels.
    pub fn cdf_pair(&self, y: f64) -> (f64, f64) {
        self.components().fold((0.0, 0.0), |(lo, hi), (w, m, s)| {
            let z = (y - m) / s;
            (lo + w * special::std_normal_cdf(z), hi + w * special::std_normal_sf(z))
        })
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .components()
            .map(|(w, m, s)| w.ln() + special::std_normal_log_pdf((y - m) / s) - s.ln())
            .collect();
        special::logsumexp(terms.iter().copied())
    }

    /// `[min μ − 10 max σ, max μ + 10 max σ]`.
    pub fn initial_bracket(&self) -> (f64, f64) {
        let smax = self.stds.iter().cloned().fold(0.0, f64::max);
        let mmin = self.means.iter().cloned().fold(f64::INFINITY, f64::min);
        let mmax = self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mmin - 10.0 * smax, mmax + 10.0 * smax)
    }

    /// Mean and standard deviation of the mixture.
    pub fn moments(&self) -> (f64, f64) {
        let mean: f64 = self.components().map(|(w, m, _)| w * m).sum();
        let second: f64 = self.components().map(|(w, m, s)| w * (s * s + m * m)).sum();
        (mean, (second - mean * mean).max(0.0).sqrt())
    }
}

/// `Φ⁻¹(F(y))`, taking the upper tail through `1 − F(y)` to keep precision.
/// The CDF is clamped to `[ε, 1 − ε]` before the quantile.
pub fn mixture_cdf_inverse(y: f64, p: &MixtureParams) -> f64 {
    let (lo, hi) = p.cdf_pair(y);
    if lo <= 0.5 {
        special::std_normal_quantile_clamped(lo)
    } else {
        -special::std_normal_quantile_clamped(hi)
    }
}

/// `log |d/dy Φ⁻¹(F(y))| = log p(y) − log φ(x)`.
pub fn mixture_cdf_inverse_log_det(y: f64, p: &MixtureParams) -> f64 {
    let x = mixture_cdf_inverse(y, p);
    p.log_pdf(y) - special::std_normal_log_pdf(x)
}

/// Solves `mixture_cdf_inverse(y) = x` for `y`.
pub fn mixture_cdf_forward(x: f64, p: &MixtureParams, solver: Solver, tol: f64) -> Result<Root> {
    let mut f = |y: f64| mixture_cdf_inverse(y, p) - x;
    match solver {
        Solver::Secant => {
            let (a, b, probes) = secant_start(&mut f, p)?;
            let mut r = roots::secant(&mut f, a, b, tol, DEFAULT_MAX_ITER)?;
            r.evaluations += probes;
            Ok(r)
        }
        Solver::Bisection | Solver::Chandrupatla => {
            let bracket = expand_bracket(&mut f, p.initial_bracket())?;
            if solver == Solver::Bisection {
                roots::bisection(f, bracket, tol, DEFAULT_MAX_ITER)
            } else {
                roots::chandrupatla(f, bracket, tol, DEFAULT_MAX_ITER)
            }
        }
    }
}

/// Starting pair for the secant iteration: the cell of the grid
/// `{μ_k + jσ_k : j = −2..2}` (plus the initial bracket) that contains the
/// root, located by binary search. Starting across a wide gap between
/// components makes the chord overshoot into the clamped tails, where the
/// iteration stalls. Returns the pair and the evaluations spent.
fn secant_start(f: &mut impl FnMut(f64) -> f64, p: &MixtureParams) -> Result<(f64, f64, usize)> {
    let (lo, hi) = p.initial_bracket();
    let mut grid: Vec<f64> = p
        .means
        .iter()
        .zip(&p.stds)
        .flat_map(|(m, s)| (-2..=2).map(move |j| m + j as f64 * s))
        .chain([lo, hi])
        .collect();
    grid.sort_by(f64::total_cmp);
    let mut probes = 0;
    let mut g = |y: f64| {
        probes += 1;
        f(y)
    };
    let (mut i, mut j) = (0, grid.len() - 1);
    let pair = if g(grid[i]) <= 0.0 && g(grid[j]) >= 0.0 {
        while j - i > 1 {
            let mid = (i + j) / 2;
            if g(grid[mid]) <= 0.0 {
                i = mid;
            } else {
                j = mid;
            }
        }
        (grid[i], grid[j])
    } else {
        let b = expand_bracket(&mut g, (grid[i], grid[j]))?;
        (b.lo, b.hi)
    };
    Ok((pair.0, pair.1, probes))
}

/// Doubles the interval width outward on the failing side until it
/// straddles a sign change.
pub fn expand_bracket(f: &mut impl FnMut(f64) -> f64, (mut lo, mut hi): (f64, f64)) -> Result<Bracket> {
    let (mut f_lo, mut f_hi) = (f(lo), f(hi));
    for _ in 0..MAX_BRACKET_DOUBLINGS {
        if let Ok(b) = Bracket::from_values(lo, hi, f_lo, f_hi) {
            return Ok(b);
        }
        let w = hi - lo;
        if f_lo > 0.0 {
            lo -= w;
            f_lo = f(lo);
        } else {
            hi += w;
            f_hi = f(hi);
        }
    }
    Bracket::from_values(lo, hi, f_lo, f_hi).map_err(|_| Error::Convergence {
        best: if f_lo.abs() < f_hi.abs() { lo } else { hi },
        iterations: MAX_BRACKET_DOUBLINGS,
    })
}

/// Tape version of the `y → x` direction for one coordinate.
/// `y` is `B×1`; `log_w`, `means`, `stds` are `1×K` with `log_w`
/// normalised. Returns `(x, ildj)`, both `B×1`.
pub fn mixture_inverse_var(y: &Var, log_w: &Var, means: &Var, stds: &Var) -> (Var, Var) {
    let z = y.sub(means).div(stds);
    let w = log_w.exp();
    let lower = w.mul(&z.normal_cdf()).sum_cols();
    let upper = w.mul(&z.neg().normal_cdf()).sum_cols();
    let use_upper = lower.value().mapv(|u| u > 0.5);
    let x = upper.normal_quantile().neg().select(&use_upper, &lower.normal_quantile());
    let log_p = y.normal_log_pdf(means, stds).add(log_w).logsumexp_cols();
    let ildj = log_p.add(&x.square().mul_scalar(0.5)).add_scalar(special::HALF_LN_2PI);
    (x, ildj)
}

/// Independent per-coordinate mixture-CDF layer with trainable logits,
/// means and softplus stds (`dim × K` each, row-major).
pub struct MixtureCdf {
    dim: usize,
    k: usize,
    logits: ParamId,
    means: ParamId,
    stds_raw: ParamId,
    solver: Solver,
    tol: f64,
}

impl MixtureCdf {
    /// Means evenly spaced on `[lo, hi]`, equal weights, common std.
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, k: usize, lo: f64, hi: f64, std: f64) -> Self {
        let grid = even_grid(lo, hi, k);
        let means: Vec<f64> = (0..dim).flat_map(|_| grid.iter().copied()).collect();
        Self {
            dim,
            k,
            logits: store.add_row(format!("{prefix}.logits"), vec![0.0; dim * k], true),
            means: store.add_row(format!("{prefix}.means"), means, true),
            stds_raw: store.add_row(format!("{prefix}.stds_raw"), vec![special::softplus_inverse(std); dim * k], true),
            solver: Solver::default(),
            tol: roots::DEFAULT_TOL,
        }
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn ids(&self) -> (ParamId, ParamId, ParamId) {
        (self.logits, self.means, self.stds_raw)
    }

    fn coordinate(&self, p: &ParamVars, d: usize) -> (Var, Var, Var) {
        let (a, b) = (d * self.k, (d + 1) * self.k);
        let logits = p.get(self.logits).slice_cols(a, b);
        let log_w = logits.sub(&logits.logsumexp_cols());
        (log_w, p.get(self.means).slice_cols(a, b), p.get(self.stds_raw).slice_cols(a, b).softplus())
    }

    /// Plain-valued parameters of coordinate `d`.
    pub fn coordinate_params(&self, p: &ParamVars, d: usize) -> Result<MixtureParams> {
        let (log_w, m, s) = self.coordinate(p, d);
        MixtureParams::new(
            log_w.value().iter().map(|v| v.exp()).collect(),
            m.value().iter().copied().collect(),
            s.value().iter().copied().collect(),
        )
    }
}

/// `k` evenly spaced points on `[lo, hi]` (the midpoint when `k = 1`).
pub fn even_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

impl Bijector for MixtureCdf {
    fn name(&self) -> String {
        format!("mixture_cdf(k={})", self.k)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.logits, self.means, self.stds_raw]
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        let tape = x.tape().clone();
        let mut y = Array2::zeros(x.value().raw_dim());
        for d in 0..self.dim {
            let mp = self.coordinate_params(p, d)?;
            for r in 0..x.rows() {
                y[[r, d]] = mixture_cdf_forward(x.value()[[r, d]], &mp, self.solver, self.tol)?.x;
            }
        }
        let y = tape.constant(y);
        let (_, ildj) = self.inverse(&y, p)?;
        Ok((y, ildj.neg()))
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        if y.cols() != self.dim {
            return Err(Error::Shape(format!("mixture layer of dim {} got {} columns", self.dim, y.cols())));
        }
        let mut xs = Vec::with_capacity(self.dim);
        let mut total: Option<Var> = None;
        for d in 0..self.dim {
            let (log_w, m, s) = self.coordinate(p, d);
            let (x, l) = mixture_inverse_var(&y.col(d), &log_w, &m, &s);
            xs.push(x);
            total = Some(match total {
                None => l,
                Some(t) => t.add(&l),
            });
        }
        Ok((concat_cols(&xs), total.unwrap()))
    }
    fn forward_is_analytic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Simpson quadrature of the mixture density from far left, an oracle
    // that does not use erfc
    fn quad_cdf(p: &MixtureParams, y: f64) -> f64 {
        let a = -40.0;
        let n = 200_000;
        let h = (y - a) / n as f64;
        let pdf = |t: f64| p.log_pdf(t).exp();
        let mut s = pdf(a) + pdf(y);
        for i in 1..n {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn single_standard_component_is_identity() {
        let p = MixtureParams::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert!((mixture_cdf_inverse(0.7, &p) - 0.7).abs() < 1e-14);
        let r = mixture_cdf_forward(1.3, &p, Solver::Chandrupatla, 1e-12).unwrap();
        assert!((r.x - 1.3).abs() < 1e-10);
    }

    #[test]
    fn symmetric_pair_at_zero() {
        let p = MixtureParams::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(mixture_cdf_inverse(0.0, &p).abs() < 1e-15);
        for s in [Solver::Bisection, Solver::Chandrupatla, Solver::Secant] {
            assert!(mixture_cdf_forward(0.0, &p, s, 1e-12).unwrap().x.abs() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_pair_matches_quadrature() {
        let p = MixtureParams::new(vec![0.3, 0.7], vec![0.0, 2.0], vec![0.5, 1.0]).unwrap();
        let oracle = special::std_normal_quantile(quad_cdf(&p, 1.0)).unwrap();
        assert!((mixture_cdf_inverse(1.0, &p) - oracle).abs() < 1e-9);
        let direct = special::std_normal_quantile(0.3 * special::std_normal_cdf(2.0) + 0.7 * special::std_normal_cdf(-1.0)).unwrap();
        assert!((mixture_cdf_inverse(1.0, &p) - direct).abs() < 1e-12);
    }

    #[test]
    fn chandrupatla_matches_bisection_on_cdf_root() {
        let p = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 1.5], vec![0.7, 0.4]).unwrap();
        let target = 0.3;
        let mut f = |y: f64| p.cdf_pair(y).0 - target;
        let b = Bracket::new(&mut f, -10.0, 10.0).unwrap();
        let r1 = roots::bisection(&mut f, b, 1e-12, 200).unwrap();
        let r2 = roots::chandrupatla(&mut f, b, 1e-12, 200).unwrap();
        assert!((r1.x - r2.x).abs() < 1e-9);
    }

    #[test]
    fn bracket_expands_for_far_targets() {
        let p = MixtureParams::new(vec![1.0], vec![0.0], vec![0.01]).unwrap();
        // initial bracket [-0.1, 0.1] only covers |x| ≤ 10 in the base
        let r = mixture_cdf_forward(3.0, &p, Solver::Chandrupatla, 1e-12).unwrap();
        assert!((r.x - 0.03).abs() < 1e-10);
    }

    #[test]
    fn log_det_matches_numeric_derivative() {
        let p = MixtureParams::new(vec![0.2, 0.5, 0.3], vec![-2.0, 0.0, 3.0], vec![0.5, 1.0, 0.8]).unwrap();
        for &y in &[-3.0, -0.5, 0.4, 2.5, 5.0] {
            let h = 1e-5;
            let d = (mixture_cdf_inverse(y + h, &p) - mixture_cdf_inverse(y - h, &p)) / (2.0 * h);
            let l = mixture_cdf_inverse_log_det(y, &p);
            assert!((l - d.ln()).abs() < 1e-6, "y={y}");
        }
    }
}
