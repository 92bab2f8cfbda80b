//! Elementwise affine, gated affine, and lower-triangular affine layers.

use ndarray::Array2;

use crate::bijectors::{Bijector, ParamId, ParamStore, ParamVars};
use crate::error::{Error, Result};
use crate::numerics::{concat_cols, special, Var};

/// `μ + σx`.
pub fn affine_forward(x: f64, mu: f64, sigma: f64) -> f64 {
    mu + sigma * x
}

/// `(y − μ)/σ`.
pub fn affine_inverse(y: f64, mu: f64, sigma: f64) -> f64 {
    (y - mu) / sigma
}

/// `log σ`, the forward log-det.
pub fn affine_log_det(sigma: f64) -> f64 {
    sigma.ln()
}

/// Effective slope `λσ + (1 − λ)` of the gated map.
pub fn gated_scale(sigma: f64, lambda: f64) -> f64 {
    lambda * sigma + (1.0 - lambda)
}

/// `λ(μ + σx) + (1 − λ)x`, evaluated literally so that `λ = 1` reproduces
/// [`affine_forward`] bit for bit and `λ = 0` is exactly the identity.
pub fn gated_affine_forward(x: f64, mu: f64, sigma: f64, lambda: f64) -> f64 {
    lambda * affine_forward(x, mu, sigma) + (1.0 - lambda) * x
}

pub fn gated_affine_inverse(y: f64, mu: f64, sigma: f64, lambda: f64) -> f64 {
    (y - lambda * mu) / gated_scale(sigma, lambda)
}

pub fn gated_affine_log_det(sigma: f64, lambda: f64) -> f64 {
    gated_scale(sigma, lambda).ln()
}

/// Tape version of the gated map: returns `(y, slope)`.
pub fn gated_affine_var(x: &Var, mu: &Var, sigma: &Var, lambda: &Var) -> (Var, Var) {
    let one_minus = lambda.rsub_scalar(1.0);
    let y = lambda.mul(&mu.add(&sigma.mul(x))).add(&one_minus.mul(x));
    let slope = lambda.mul(sigma).add(&one_minus);
    (y, slope)
}

pub fn gated_affine_inverse_var(y: &Var, mu: &Var, sigma: &Var, lambda: &Var) -> (Var, Var) {
    let slope = lambda.mul(sigma).add(&lambda.rsub_scalar(1.0));
    (y.sub(&lambda.mul(mu)).div(&slope), slope)
}

fn check_dim(layer: &str, v: &Var, dim: usize) -> Result<()> {
    if v.cols() != dim {
        return Err(Error::Shape(format!("{layer}: expected {dim} columns, got {}", v.cols())));
    }
    Ok(())
}

/// `y = μ + σ ⊙ x` with `σ = softplus(raw)`. Diagonal Gaussian (mean-field)
/// posteriors are this layer over a standard-normal base.
#[derive(Debug, Clone)]
pub struct Affine {
    dim: usize,
    loc: ParamId,
    scale_raw: ParamId,
}

impl Affine {
    pub fn new(store: &mut ParamStore, prefix: &str, loc: Vec<f64>, scale: Vec<f64>, trainable: bool) -> Self {
        assert_eq!(loc.len(), scale.len());
        let dim = loc.len();
        let raw = scale.into_iter().map(special::softplus_inverse).collect();
        Self {
            dim,
            loc: store.add_row(format!("{prefix}.loc"), loc, trainable),
            scale_raw: store.add_row(format!("{prefix}.scale_raw"), raw, trainable),
        }
    }

    /// Identity-initialised trainable layer.
    pub fn identity(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        Self::new(store, prefix, vec![0.0; dim], vec![1.0; dim], true)
    }

    pub fn loc_id(&self) -> ParamId {
        self.loc
    }

    pub fn scale_raw_id(&self) -> ParamId {
        self.scale_raw
    }
}

impl Bijector for Affine {
    fn name(&self) -> String {
        "affine".into()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.loc, self.scale_raw]
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        check_dim("affine", x, self.dim)?;
        let sigma = p.get(self.scale_raw).softplus();
        let y = p.get(self.loc).add(&sigma.mul(x));
        Ok((y, sigma.ln().sum_cols()))
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        check_dim("affine", y, self.dim)?;
        let sigma = p.get(self.scale_raw).softplus();
        let x = y.sub(p.get(self.loc)).div(&sigma);
        Ok((x, sigma.ln().sum_cols().neg()))
    }
}

/// Elementwise gated affine: `λ(μ + σx) + (1 − λ)x`, with
/// `λ = sigmoid(gate_scale · raw)` per coordinate.
#[derive(Debug, Clone)]
pub struct GatedAffine {
    dim: usize,
    loc: ParamId,
    scale_raw: ParamId,
    gate_raw: ParamId,
    gate_scale: f64,
}

impl GatedAffine {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        loc: Vec<f64>,
        scale: Vec<f64>,
        gate: f64,
        gate_scale: f64,
    ) -> Self {
        let dim = loc.len();
        let raw = scale.into_iter().map(special::softplus_inverse).collect();
        let g = special::logit(gate) / gate_scale;
        Self {
            dim,
            loc: store.add_row(format!("{prefix}.loc"), loc, true),
            scale_raw: store.add_row(format!("{prefix}.scale_raw"), raw, true),
            gate_raw: store.add_row(format!("{prefix}.gate_raw"), vec![g; dim], true),
            gate_scale,
        }
    }

    pub fn gate_id(&self) -> ParamId {
        self.gate_raw
    }

    pub fn lambda(&self, p: &ParamVars) -> Var {
        p.get(self.gate_raw).mul_scalar(self.gate_scale).sigmoid()
    }
}

impl Bijector for GatedAffine {
    fn name(&self) -> String {
        "gated_affine".into()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.loc, self.scale_raw, self.gate_raw]
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        check_dim("gated_affine", x, self.dim)?;
        let sigma = p.get(self.scale_raw).softplus();
        let (y, slope) = gated_affine_var(x, p.get(self.loc), &sigma, &self.lambda(p));
        Ok((y, slope.ln().sum_cols()))
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        check_dim("gated_affine", y, self.dim)?;
        let sigma = p.get(self.scale_raw).softplus();
        let (x, slope) = gated_affine_inverse_var(y, p.get(self.loc), &sigma, &self.lambda(p));
        Ok((x, slope.ln().sum_cols().neg()))
    }
}

/// `y = μ + L x` with `L` lower triangular and a softplus-positive diagonal
/// (full-covariance Gaussian over a standard-normal base). Stored as the
/// transpose `U = Lᵀ` so rows map as `y = μ + x U`.
#[derive(Debug, Clone)]
pub struct LowerTriangular {
    dim: usize,
    loc: ParamId,
    off_diag: ParamId,
    diag_raw: ParamId,
    upper_mask: Array2<f64>,
    eye: Array2<f64>,
}

impl LowerTriangular {
    pub fn identity(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        let mut upper_mask = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in i + 1..dim {
                upper_mask[[i, j]] = 1.0;
            }
        }
        Self {
            dim,
            loc: store.add_row(format!("{prefix}.loc"), vec![0.0; dim], true),
            off_diag: store.add(format!("{prefix}.off_diag"), Array2::zeros((dim, dim)), true),
            diag_raw: store.add_row(format!("{prefix}.diag_raw"), vec![special::softplus_inverse(1.0); dim], true),
            upper_mask,
            eye: Array2::eye(dim),
        }
    }

    pub fn ids(&self) -> (ParamId, ParamId, ParamId) {
        (self.loc, self.off_diag, self.diag_raw)
    }

    fn upper(&self, p: &ParamVars) -> (Var, Var) {
        let t = p.get(self.loc).tape().clone();
        let diag = p.get(self.diag_raw).softplus();
        let u = p
            .get(self.off_diag)
            .mul(&t.constant(self.upper_mask.clone()))
            .add(&diag.mul(&t.constant(self.eye.clone())));
        (u, diag)
    }
}

impl Bijector for LowerTriangular {
    fn name(&self) -> String {
        "lower_triangular".into()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.loc, self.off_diag, self.diag_raw]
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        check_dim("lower_triangular", x, self.dim)?;
        let (u, diag) = self.upper(p);
        let y = p.get(self.loc).add(&x.matmul(&u));
        Ok((y, diag.ln().sum_cols()))
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        check_dim("lower_triangular", y, self.dim)?;
        let (u, diag) = self.upper(p);
        let r = y.sub(p.get(self.loc));
        let mut xs: Vec<Var> = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let mut num = r.col(j);
            if j > 0 {
                let prev = concat_cols(&xs);
                let coeff = u.col(j).slice_rows(0, j);
                num = num.sub(&prev.matmul(&coeff));
            }
            xs.push(num.div(&diag.col(j)));
        }
        Ok((concat_cols(&xs), diag.ln().sum_cols().neg()))
    }
}
