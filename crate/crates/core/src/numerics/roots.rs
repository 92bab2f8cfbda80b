//! Scalar root finding: bisection, secant, and Chandrupatla's hybrid
//! bisection / inverse-quadratic-interpolation method.
//!
//! Root-finding results are plain `f64`s; no gradient flows through them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// A sign-changing interval `[lo, hi]` with cached endpoint values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Bracket {
    /// Evaluates `f` at both ends and validates.
    pub fn new(f: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64) -> Result<Self> {
        Self::from_values(lo, hi, f(lo), f(hi))
    }

    pub fn from_values(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> Result<Self> {
        let b = Self { lo, hi, f_lo, f_hi };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Bracket { lo, hi, f_lo, f_hi })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lo < self.hi
            && self.f_lo.is_finite()
            && self.f_hi.is_finite()
            && (self.f_lo == 0.0 || self.f_hi == 0.0 || (self.f_lo < 0.0) != (self.f_hi < 0.0))
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// A located root with its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    /// Function evaluations made by the solver (bracket endpoints excluded).
    pub evaluations: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Bisection,
    #[default]
    Chandrupatla,
    Secant,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bisection" => Ok(Solver::Bisection),
            "chandrupatla" => Ok(Solver::Chandrupatla),
            "secant" => Ok(Solver::Secant),
            other => Err(Error::Config(format!("unknown root solver '{other}'"))),
        }
    }
}

fn same_sign(a: f64, b: f64) -> bool {
    (a < 0.0) == (b < 0.0)
}

pub fn bisection(
    mut f: impl FnMut(f64) -> f64,
    bracket: Bracket,
    tol: f64,
    max_iter: usize,
) -> Result<Root> {
    if !bracket.is_valid() {
        return Err(Error::Bracket {
            lo: bracket.lo,
            hi: bracket.hi,
            f_lo: bracket.f_lo,
            f_hi: bracket.f_hi,
        });
    }
    if bracket.f_lo == 0.0 {
        return Ok(Root { x: bracket.lo, evaluations: 0, iterations: 0 });
    }
    if bracket.f_hi == 0.0 {
        return Ok(Root { x: bracket.hi, evaluations: 0, iterations: 0 });
    }
    let (mut lo, mut hi, mut f_lo) = (bracket.lo, bracket.hi, bracket.f_lo);
    let mut evals = 0;
    while hi - lo > tol {
        if evals >= max_iter {
            return Err(Error::Convergence { best: 0.5 * (lo + hi), iterations: evals });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval below f64 resolution
        }
        let fm = f(mid);
        evals += 1;
        if fm == 0.0 {
            return Ok(Root { x: mid, evaluations: evals, iterations: evals });
        }
        if same_sign(fm, f_lo) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(Root { x: 0.5 * (lo + hi), evaluations: evals, iterations: evals })
}

/// Secant recurrence
/// `x_n = (x_{n−2} f(x_{n−1}) − x_{n−1} f(x_{n−2})) / (f(x_{n−1}) − f(x_{n−2}))`.
pub fn secant(
    mut f: impl FnMut(f64) -> f64,
    x0: f64,
    x1: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Root> {
    if x0 == x1 {
        return Err(Error::Domain("secant needs two distinct starting points".into()));
    }
    let (mut xa, mut xb) = (x0, x1);
    let (mut fa, mut fb) = (f(xa), f(xb));
    let mut evals = 2;
    if fb == 0.0 {
        return Ok(Root { x: xb, evaluations: evals, iterations: 0 });
    }
    for iter in 1..=max_iter {
        if fb == fa {
            return Err(Error::DegenerateSecant { x: xb, value: fb });
        }
        let xn = (xa * fb - xb * fa) / (fb - fa);
        if !xn.is_finite() {
            return Err(Error::Convergence { best: xb, iterations: iter });
        }
        let fnew = f(xn);
        evals += 1;
        if (xn - xb).abs() <= tol || fnew.abs() <= tol {
            return Ok(Root { x: xn, evaluations: evals, iterations: iter });
        }
        xa = xb;
        fa = fb;
        xb = xn;
        fb = fnew;
    }
    Err(Error::Convergence { best: xb, iterations: max_iter })
}

pub fn chandrupatla(
    f: impl FnMut(f64) -> f64,
    bracket: Bracket,
    tol: f64,
    max_iter: usize,
) -> Result<Root> {
    chandrupatla_observed(f, bracket, tol, max_iter, |_, _| {})
}

/// Chandrupatla's method, calling `observe(lo, hi)` with the bracket after
/// every iteration.
pub fn chandrupatla_observed(
    mut f: impl FnMut(f64) -> f64,
    bracket: Bracket,
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(f64, f64),
) -> Result<Root> {
    if !bracket.is_valid() {
        return Err(Error::Bracket {
            lo: bracket.lo,
            hi: bracket.hi,
            f_lo: bracket.f_lo,
            f_hi: bracket.f_hi,
        });
    }
    if bracket.f_lo == 0.0 {
        return Ok(Root { x: bracket.lo, evaluations: 0, iterations: 0 });
    }
    if bracket.f_hi == 0.0 {
        return Ok(Root { x: bracket.hi, evaluations: 0, iterations: 0 });
    }
    // a: newest point, b: the opposite-sign end, c: the discarded point
    let (mut a, mut fa) = (bracket.hi, bracket.f_hi);
    let (mut b, mut fb) = (bracket.lo, bracket.f_lo);
    let (mut c, mut fc);
    let mut t = 0.5;
    let mut evals = 0;
    loop {
        if evals >= max_iter {
            let best = if fa.abs() < fb.abs() { a } else { b };
            return Err(Error::Convergence { best, iterations: evals });
        }
        let xt = a + t * (b - a);
        let ft = f(xt);
        evals += 1;
        if same_sign(ft, fa) {
            c = a;
            fc = fa;
        } else {
            c = b;
            fc = fb;
            b = a;
            fb = fa;
        }
        a = xt;
        fa = ft;
        observe(a.min(b), a.max(b));

        let (xm, fm) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
        let width = (b - a).abs();
        if fm == 0.0 || width <= tol {
            return Ok(Root { x: xm, evaluations: evals, iterations: evals });
        }
        let tl = (0.5 * tol / width).min(0.5);

        let xi = (a - b) / (c - b);
        let phi = (fa - fb) / (fc - fb);
        t = if phi * phi < xi && (1.0 - phi) * (1.0 - phi) < 1.0 - xi {
            fa / (fb - fa) * fc / (fb - fc) + (c - a) / (b - a) * fa / (fc - fa) * fb / (fc - fb)
        } else {
            0.5
        };
        if !t.is_finite() {
            t = 0.5;
        }
        t = t.clamp(tl, 1.0 - tl);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::std_normal_cdf;

    fn br(f: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64) -> Bracket {
        Bracket::new(f, lo, hi).unwrap()
    }

    // Dense-grid scan for the sign change, then refinement by repeated
    // rescanning of the located cell.
    fn grid_oracle(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..8 {
            let n = 1000;
            let h = (hi - lo) / n as f64;
            let mut prev = f(lo);
            for i in 1..=n {
                let x = lo + i as f64 * h;
                let fx = f(x);
                if !same_sign(prev, fx) || fx == 0.0 {
                    hi = x;
                    lo = x - h;
                    break;
                }
                prev = fx;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn bisection_linear() {
        let mut f = |x: f64| x - 2.0;
        let b = br(&mut f, 0.0, 5.0);
        let r = bisection(f, b, 1e-10, 200).unwrap();
        assert!((r.x - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn bisection_cdf_symmetry() {
        let mut f = |x: f64| std_normal_cdf(x) - 0.5;
        let b = br(&mut f, -3.0, 3.0);
        let r = bisection(f, b, 1e-10, 200).unwrap();
        assert!(r.x.abs() <= 1e-10);
    }

    #[test]
    fn bisection_cubic_against_grid_oracle() {
        let f = |x: f64| x * x * x - x - 2.0;
        let oracle = grid_oracle(f, 1.0, 2.0);
        assert!((oracle - 1.5213797).abs() < 1e-6);
        let mut g = f;
        let b = br(&mut g, 1.0, 2.0);
        let r = bisection(f, b, 1e-10, 200).unwrap();
        assert!((r.x - oracle).abs() < 1e-9);
    }

    #[test]
    fn bisection_reports_invalid_bracket_and_cap() {
        assert!(matches!(
            Bracket::new(&mut |x: f64| x * x + 1.0, -1.0, 1.0),
            Err(Error::Bracket { .. })
        ));
        let mut f = |x: f64| x - 0.3;
        let b = br(&mut f, 0.0, 1.0);
        match bisection(f, b, 1e-12, 5) {
            Err(Error::Convergence { best, .. }) => assert!((best - 0.3).abs() < 0.05),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn secant_linear_is_one_step() {
        let r = secant(|x| x - 2.0, 0.0, 1.0, 1e-10, 50).unwrap();
        assert_eq!(r.x, 2.0);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn secant_quadratic_against_bisection() {
        let f = |x: f64| x * x - 4.0;
        let mut g = f;
        let oracle = bisection(f, br(&mut g, 1.0, 3.0), 1e-12, 200).unwrap().x;
        let r = secant(f, 1.0, 3.0, 1e-10, 100).unwrap();
        assert!((r.x - oracle).abs() < 1e-8);
        assert!((r.x - 2.0).abs() < 1e-8);
    }

    #[test]
    fn secant_degenerate() {
        assert!(matches!(
            secant(|_| 1.0, 0.0, 1.0, 1e-10, 10),
            Err(Error::DegenerateSecant { .. })
        ));
    }

    #[test]
    fn chandrupatla_linear_and_tanh() {
        let mut f = |x: f64| x - 2.0;
        let r = chandrupatla(f, br(&mut f, 0.0, 5.0), 1e-10, 200).unwrap();
        assert!((r.x - 2.0).abs() < 1e-10);

        let mut g = |x: f64| x.tanh() - 0.5;
        let r = chandrupatla(g, br(&mut g, 0.0, 2.0), 1e-10, 200).unwrap();
        assert!((r.x - 0.5f64.atanh()).abs() < 1e-8);
        assert!((r.x - 0.5493061).abs() < 1e-7);
    }

    #[test]
    fn chandrupatla_bracket_never_expands() {
        let mut f = |x: f64| (x - 0.7).powi(3) + 0.1 * (x - 0.7);
        let b = br(&mut f, -4.0, 9.0);
        let mut widths = vec![b.width()];
        chandrupatla_observed(f, b, 1e-12, 200, |lo, hi| widths.push(hi - lo)).unwrap();
        for w in widths.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn solver_names_parse() {
        assert_eq!("secant".parse::<Solver>().unwrap(), Solver::Secant);
        assert!("newton".parse::<Solver>().is_err());
    }
}
