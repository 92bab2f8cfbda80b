//! MADE conditioner and the masked autoregressive affine layer.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bijectors::{Bijector, ParamId, ParamStore, ParamVars};
use crate::error::{Error, Result};
use crate::numerics::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: &Var) -> Var {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.relu(),
        }
    }
}

#[derive(Clone)]
struct DenseLayer {
    w: ParamId,
    b: ParamId,
    mask: Array2<f64>,
}

/// Masked MLP producing `(μ, α)` such that output `j` sees only inputs
/// `< j` (natural order).
#[derive(Clone)]
pub struct MadeConditioner {
    dim: usize,
    layers: Vec<DenseLayer>,
    activation: Activation,
}

fn hidden_degrees(dim: usize, width: usize) -> Vec<usize> {
    let m = dim.saturating_sub(1).max(1);
    (0..width).map(|k| k % m + 1).collect()
}

impl MadeConditioner {
    /// Hidden layers use Glorot-uniform weights; the output layer starts at
    /// zero so the owning layer is the identity at initialisation.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dim >= 1);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_deg: Vec<usize> = (1..=dim).collect();
        for (li, &width) in hidden.iter().enumerate() {
            let out_deg = hidden_degrees(dim, width);
            let mask = Array2::from_shape_fn((in_deg.len(), width), |(i, o)| {
                if out_deg[o] >= in_deg[i] { 1.0 } else { 0.0 }
            });
            let limit = (6.0 / (in_deg.len() + width) as f64).sqrt();
            let w = Array2::from_shape_fn((in_deg.len(), width), |_| rng.random_range(-limit..limit));
            layers.push(DenseLayer {
                w: store.add(format!("{prefix}.w{li}"), w, true),
                b: store.add(format!("{prefix}.b{li}"), Array2::zeros((1, width)), true),
                mask,
            });
            in_deg = out_deg;
        }
        let out_deg: Vec<usize> = (1..=dim).chain(1..=dim).collect();
        let mask = Array2::from_shape_fn((in_deg.len(), 2 * dim), |(i, o)| {
            if out_deg[o] > in_deg[i] { 1.0 } else { 0.0 }
        });
        let n = hidden.len();
        layers.push(DenseLayer {
            w: store.add(format!("{prefix}.w{n}"), Array2::zeros((in_deg.len(), 2 * dim)), true),
            b: store.add(format!("{prefix}.b{n}"), Array2::zeros((1, 2 * dim)), true),
            mask,
        });
        Self { dim, layers, activation }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    /// Id of the output weight (zero at initialisation).
    pub fn output_weight(&self) -> ParamId {
        self.layers.last().unwrap().w
    }

    pub fn output_bias(&self) -> ParamId {
        self.layers.last().unwrap().b
    }

    /// `(μ, α)`, each `B×dim`.
    pub fn eval(&self, x: &Var, p: &ParamVars) -> (Var, Var) {
        let tape = x.tape().clone();
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let w = p.get(l.w).mul(&tape.constant(l.mask.clone()));
            h = h.matmul(&w).add(p.get(l.b));
            if i < last {
                h = self.activation.apply(&h);
            }
        }
        (h.slice_cols(0, self.dim), h.slice_cols(self.dim, 2 * self.dim))
    }
}

/// Masked autoregressive affine layer. The inverse (density) direction is
/// one conditioner pass: `x = (y − μ(y))·exp(−α(y))`. The forward
/// (sampling) direction needs `dim` passes, since output `j` is only final
/// once outputs `< j` are.
#[derive(Clone)]
pub struct MaskedAutoregressive {
    made: MadeConditioner,
}

impl MaskedAutoregressive {
    pub fn new(made: MadeConditioner) -> Self {
        Self { made }
    }

    pub fn conditioner(&self) -> &MadeConditioner {
        &self.made
    }

    fn check(&self, v: &Var) -> Result<()> {
        if v.cols() != self.made.dim {
            return Err(Error::Shape(format!(
                "autoregressive layer of dim {} applied to {} columns",
                self.made.dim,
                v.cols()
            )));
        }
        Ok(())
    }
}

impl Bijector for MaskedAutoregressive {
    fn name(&self) -> String {
        "maf".into()
    }
    fn dim(&self) -> usize {
        self.made.dim
    }
    fn param_ids(&self) -> Vec<ParamId> {
        self.made.param_ids()
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        self.check(x)?;
        let mut y = x.tape().constant(Array2::zeros(x.value().raw_dim()));
        let mut alpha = None;
        for _ in 0..self.made.dim {
            let (mu, a) = self.made.eval(&y, p);
            y = mu.add(&a.exp().mul(x));
            alpha = Some(a);
        }
        Ok((y, alpha.unwrap().sum_cols()))
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        self.check(y)?;
        let (mu, a) = self.made.eval(y, p);
        let x = y.sub(&mu).mul(&a.neg().exp());
        Ok((x, a.sum_cols().neg()))
    }
}
