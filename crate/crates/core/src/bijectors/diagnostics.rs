//! Numerical probes for layer contracts.

use ndarray::Array2;

use crate::bijectors::{forward_values, Bijector, ParamStore};
use crate::error::Result;

/// Central-difference Jacobian of the forward map at one point.
pub fn numeric_jacobian(layer: &dyn Bijector, store: &ParamStore, x: &[f64], h: f64) -> Result<Array2<f64>> {
    let d = x.len();
    // all perturbations in one batch: rows 2i and 2i+1 are x ± h e_i
    let mut batch = Array2::zeros((2 * d, d));
    for i in 0..d {
        for j in 0..d {
            batch[[2 * i, j]] = x[j];
            batch[[2 * i + 1, j]] = x[j];
        }
        batch[[2 * i, i]] += h;
        batch[[2 * i + 1, i]] -= h;
    }
    let (y, _) = forward_values(layer, store, &batch)?;
    let mut jac = Array2::zeros((d, d));
    for i in 0..d {
        for o in 0..d {
            jac[[o, i]] = (y[[2 * i, o]] - y[[2 * i + 1, o]]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `log |det A|` by LU with partial pivoting.
pub fn log_abs_det(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut m = a.clone();
    let mut acc = 0.0;
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| m[[i, k]].abs().total_cmp(&m[[j, k]].abs()))
            .unwrap();
        if m[[piv, k]] == 0.0 {
            return f64::NEG_INFINITY;
        }
        if piv != k {
            for c in 0..n {
                m.swap([k, c], [piv, c]);
            }
        }
        let p = m[[k, k]];
        acc += p.abs().ln();
        for i in k + 1..n {
            let f = m[[i, k]] / p;
            for c in k..n {
                m[[i, c]] -= f * m[[k, c]];
            }
        }
    }
    acc
}

/// `log |det J|` of the forward map from finite differences.
pub fn numeric_log_det(layer: &dyn Bijector, store: &ParamStore, x: &[f64], h: f64) -> Result<f64> {
    Ok(log_abs_det(&numeric_jacobian(layer, store, x, h)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn determinant_oracle() {
        let a = array![[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        // 2(12 − 1) − 1(4 − 0) = 18
        assert!((log_abs_det(&a) - 18f64.ln()).abs() < 1e-14);
        let b = array![[0.0, 2.0], [3.0, 0.0]];
        assert!((log_abs_det(&b) - 6f64.ln()).abs() < 1e-14);
    }
}
