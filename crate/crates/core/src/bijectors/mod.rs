//! Invertible layers.
//!
//! Every layer maps batches row-wise (`B×dim`) and reports the log-absolute
//! Jacobian determinant per row. Log-dets may come back as `1×1` when they do
//! not depend on the input; they broadcast against `B×1`.

pub mod affine;
pub mod chain;
pub mod diagnostics;
pub mod made;
pub mod mixture;
pub mod params;
pub mod permute;

use ndarray::Array2;

use crate::error::Result;
use crate::numerics::{Tape, Var};

pub use affine::{
    affine_forward, affine_inverse, affine_log_det, gated_affine_forward, gated_affine_inverse,
    gated_affine_log_det, gated_scale, Affine, GatedAffine, LowerTriangular,
};
pub use chain::{Chain, Invert};
pub use made::{Activation, MadeConditioner, MaskedAutoregressive};
pub use mixture::{
    mixture_cdf_forward, mixture_cdf_inverse, mixture_cdf_inverse_log_det, mixture_inverse_var,
    MixtureCdf, MixtureParams,
};
pub use params::{ParamEntry, ParamId, ParamStore, ParamVars};
pub use permute::Permutation;

/// The invertible-layer contract.
pub trait Bijector: Send + Sync {
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    /// Parameters this layer reads from the store.
    fn param_ids(&self) -> Vec<ParamId>;

    /// `(y, log|det ∂y/∂x|)`.
    fn forward(&self, x: &Var, params: &ParamVars) -> Result<(Var, Var)>;

    /// `(x, log|det ∂x/∂y|)`.
    fn inverse(&self, y: &Var, params: &ParamVars) -> Result<(Var, Var)>;

    /// Whether `forward` is computed in closed form (as opposed to numeric
    /// root finding, whose outputs carry no gradient).
    fn forward_is_analytic(&self) -> bool {
        true
    }

    fn inverse_is_analytic(&self) -> bool {
        true
    }
}

/// Value-only forward pass over a plain matrix.
pub fn forward_values(
    layer: &dyn Bijector,
    store: &ParamStore,
    x: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<f64>)> {
    run_values(layer, store, x, true)
}

/// Value-only inverse pass over a plain matrix.
pub fn inverse_values(
    layer: &dyn Bijector,
    store: &ParamStore,
    y: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<f64>)> {
    run_values(layer, store, y, false)
}

fn run_values(
    layer: &dyn Bijector,
    store: &ParamStore,
    input: &Array2<f64>,
    forward: bool,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let tape = Tape::no_grad();
    let params = store.bind(&tape);
    let v = tape.constant(input.clone());
    let (out, ldj) = if forward { layer.forward(&v, &params)? } else { layer.inverse(&v, &params)? };
    let rows = input.nrows();
    let ldj = ldj.value();
    let ldj: Vec<f64> = (0..rows).map(|r| ldj[[r.min(ldj.nrows() - 1), 0]]).collect();
    Ok((out.value().clone(), ldj))
}

/// Adds a `1×1` or `B×1` log-det into a running total.
pub(crate) fn accumulate(total: Option<Var>, ldj: Var) -> Option<Var> {
    Some(match total {
        None => ldj,
        Some(t) => t.add(&ldj),
    })
}
