//! Central finite-difference gradient check.

use crate::error::Result;
use crate::numerics::autodiff::{compute_gradients, Tape, Tensor, Var};

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |g_ad − g_fd| / max(1, |g_fd|)` over every parameter entry.
    pub max_rel_error: f64,
    /// `(tensor index, flat entry index)` where the maximum occurred.
    pub worst: (usize, usize),
    pub entries: usize,
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`. `f` receives a tape and one leaf per parameter tensor and must
/// return a `1×1` value; it is called once on a recording tape and twice per
/// entry on value-only tapes.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0);
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = compute_gradients(&loss, &vars)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let t = Tape::no_grad();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.var(p.clone())).collect();
        Ok(f(&t, &vs)?.item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = GradCheck { max_rel_error: 0.0, worst: (0, 0), entries: 0 };
    for (ti, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let orig = p.as_slice().map(|s| s[k]).unwrap_or_else(|| p.iter().nth(k).copied().unwrap());
            set_flat(&mut work[ti], k, orig + h);
            let up = eval(&work)?;
            set_flat(&mut work[ti], k, orig - h);
            let down = eval(&work)?;
            set_flat(&mut work[ti], k, orig);
            let fd = (up - down) / (2.0 * h);
            let ad = grads[ti].iter().nth(k).copied().unwrap();
            let err = (ad - fd).abs() / fd.abs().max(1.0);
            out.entries += 1;
            if err > out.max_rel_error || !err.is_finite() {
                out.max_rel_error = err;
                out.worst = (ti, k);
            }
        }
    }
    Ok(out)
}

fn set_flat(t: &mut Tensor, k: usize, v: f64) {
    let cols = t.ncols();
    t[[k / cols, k % cols]] = v;
}
