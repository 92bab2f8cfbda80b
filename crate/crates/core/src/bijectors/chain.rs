use crate::bijectors::{accumulate, Bijector, ParamId, ParamVars};
use crate::error::{Error, Result};
use crate::numerics::Var;

/// Composition: `forward` applies layers in listed order, `inverse` in
/// reverse order, and log-dets add.
pub struct Chain {
    layers: Vec<Box<dyn Bijector>>,
    dim: usize,
}

impl Chain {
    pub fn new(layers: Vec<Box<dyn Bijector>>) -> Result<Self> {
        let dim = layers.first().map(|l| l.dim()).unwrap_or(0);
        for (i, l) in layers.iter().enumerate() {
            if l.dim() != dim {
                return Err(Error::Shape(format!(
                    "layer {i} ({}) has dim {}, chain dim is {dim}",
                    l.name(),
                    l.dim()
                )));
            }
        }
        Ok(Self { layers, dim })
    }

    pub fn layers(&self) -> &[Box<dyn Bijector>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Bijector for Chain {
    fn name(&self) -> String {
        let names: Vec<String> = self.layers.iter().map(|l| l.name()).collect();
        format!("chain[{}]", names.join(", "))
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.param_ids()).collect()
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        let mut cur = x.clone();
        let mut total = None;
        for l in &self.layers {
            let (y, ldj) = l.forward(&cur, p)?;
            cur = y;
            total = accumulate(total, ldj);
        }
        Ok((cur, total.unwrap_or_else(|| x.tape().scalar(0.0))))
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        let mut cur = y.clone();
        let mut total = None;
        for l in self.layers.iter().rev() {
            let (x, ldj) = l.inverse(&cur, p)?;
            cur = x;
            total = accumulate(total, ldj);
        }
        Ok((cur, total.unwrap_or_else(|| y.tape().scalar(0.0))))
    }
    fn forward_is_analytic(&self) -> bool {
        self.layers.iter().all(|l| l.forward_is_analytic())
    }
    fn inverse_is_analytic(&self) -> bool {
        self.layers.iter().all(|l| l.inverse_is_analytic())
    }
}

/// Swaps the directions of a layer.
pub struct Invert(pub Box<dyn Bijector>);

impl Bijector for Invert {
    fn name(&self) -> String {
        format!("invert({})", self.0.name())
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn param_ids(&self) -> Vec<ParamId> {
        self.0.param_ids()
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        self.0.inverse(x, p)
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        self.0.forward(y, p)
    }
    fn forward_is_analytic(&self) -> bool {
        self.0.inverse_is_analytic()
    }
    fn inverse_is_analytic(&self) -> bool {
        self.0.forward_is_analytic()
    }
}
