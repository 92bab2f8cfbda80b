use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bijectors::affine::{gated_affine_inverse_var, gated_affine_var};
use crate::bijectors::mixture::{mixture_cdf_forward, mixture_inverse_var, MixtureParams};
use crate::bijectors::{Bijector, ParamId, ParamStore, ParamVars};
use crate::error::{Error, Result};
use crate::numerics::roots::{Solver, DEFAULT_TOL};
use crate::numerics::{concat_cols, special, Tape, Var};
use crate::probprog::{self, BoundParams, Distribution, ProgramGraph};

/// Gate settings: `λ_j = sigmoid(scale · raw_j)`, one gate per node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// `λ` at initialisation.
    pub init: f64,
    pub scale: f64,
}

impl GateConfig {
    /// Close to the embedded program (variational posteriors).
    pub fn near_program() -> Self {
        Self { init: 0.999, scale: 100.0 }
    }

    /// Symmetric start (density estimation).
    pub fn balanced() -> Self {
        Self { init: 0.5, scale: 100.0 }
    }

    pub fn raw_init(&self) -> f64 {
        special::logit(self.init) / self.scale
    }
}

/// A probabilistic program compiled into an invertible layer. The forward
/// map sends standard-normal inputs to program samples (node by node, each
/// conditioned on already transformed parents); the inverse reads every
/// parent from its input and runs all nodes at once.
pub struct StructuredLayer {
    graph: ProgramGraph,
    params: Vec<ParamId>,
    gates: Option<(ParamId, f64)>,
    offsets: Vec<usize>,
    solver: Solver,
    tol: f64,
}

impl StructuredLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, graph: ProgramGraph, gate: Option<GateConfig>) -> Result<Self> {
        graph.check()?;
        for (j, n) in graph.nodes.iter().enumerate() {
            match n.dist {
                Distribution::Normal { .. } => {}
                Distribution::Mixture { .. } => {
                    if gate.is_some() {
                        return Err(Error::UnsupportedForGated(format!(
                            "mixture node {j} ('{}') cannot be gated",
                            n.name
                        )));
                    }
                    if !n.parents.is_empty() {
                        return Err(Error::UnsupportedDistribution(format!(
                            "mixture node {j} ('{}') must be a root",
                            n.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::UnsupportedDistribution(format!(
                        "node {j} ('{}') is {}",
                        n.name,
                        n.dist.kind_name()
                    )))
                }
            }
        }
        let params = graph
            .params
            .iter()
            .map(|gp| {
                let n = gp.raw.len();
                store.add(
                    format!("{prefix}.{}", gp.name),
                    Array2::from_shape_vec((1, n), gp.raw.clone()).unwrap(),
                    gp.trainable,
                )
            })
            .collect();
        let gates = gate.map(|g| {
            let id = store.add_row(format!("{prefix}.gate_raw"), vec![g.raw_init(); graph.nodes.len()], true);
            (id, g.scale)
        });
        let offsets = graph.offsets();
        Ok(Self { graph, params, gates, offsets, solver: Solver::default(), tol: DEFAULT_TOL })
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn graph(&self) -> &ProgramGraph {
        &self.graph
    }

    pub fn is_gated(&self) -> bool {
        self.gates.is_some()
    }

    pub fn gate_id(&self) -> Option<ParamId> {
        self.gates.map(|g| g.0)
    }

    /// Store id of a graph parameter.
    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.graph.param_index(name).map(|i| self.params[i])
    }

    /// Current gate values `1×n_nodes`, or `None` when ungated.
    pub fn lambda(&self, p: &ParamVars) -> Option<Var> {
        self.gates.map(|(id, scale)| p.get(id).mul_scalar(scale).sigmoid())
    }

    pub fn bound_params(&self, p: &ParamVars) -> BoundParams {
        let raw: Vec<Var> = self.params.iter().map(|&id| p.get(id).clone()).collect();
        BoundParams::from_raw(&self.graph, &raw)
    }

    fn check_input(&self, v: &Var) -> Result<()> {
        if v.cols() != self.graph.total_dim() {
            return Err(Error::Shape(format!(
                "structured layer '{}' has dim {}, got {} columns",
                self.graph.name,
                self.graph.total_dim(),
                v.cols()
            )));
        }
        Ok(())
    }

    fn block(&self, v: &Var, j: usize) -> Var {
        let o = self.offsets[j];
        v.slice_cols(o, o + self.graph.nodes[j].dim)
    }

    fn finite(&self, v: &Var, j: usize) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context: format!("structured node {j} ('{}')", self.graph.nodes[j].name) })
        }
    }

    /// Forward map with explicit gates (`1×n_nodes`), or the plain program
    /// transform when `lambda` is `None`.
    pub fn forward_with(&self, x: &Var, p: &ParamVars, lambda: Option<&Var>) -> Result<(Var, Var)> {
        self.check_input(x)?;
        let tape = x.tape().clone();
        let bound = self.bound_params(p);
        let mut outs: Vec<Var> = Vec::with_capacity(self.graph.nodes.len());
        let mut total: Option<Var> = None;
        for (j, node) in self.graph.nodes.iter().enumerate() {
            let x_j = self.block(x, j);
            let parents: Vec<Var> = node.parents.iter().map(|&q| outs[q].clone()).collect();
            let (y, ld) = match &node.dist {
                Distribution::Normal { mean, std } => {
                    let m = mean.eval(&tape, &parents, &bound)?;
                    let s = std.eval(&tape, &parents, &bound)?;
                    match lambda {
                        None => (m.add(&s.mul(&x_j)), s.ln()),
                        Some(lam) => {
                            let (y, slope) = gated_affine_var(&x_j, &m, &s, &lam.col(j));
                            (y, slope.ln())
                        }
                    }
                }
                Distribution::Mixture { components, logits, means, stds } => {
                    let (lw, mu, sd) = mixture_node_params(&bound, *components, logits, means, stds)?;
                    let mut y = Array2::zeros(x_j.value().raw_dim());
                    for d in 0..node.dim {
                        let mp = plain_mixture(&lw[d], &mu[d], &sd[d])?;
                        for r in 0..y.nrows() {
                            y[[r, d]] = mixture_cdf_forward(x_j.value()[[r, d]], &mp, self.solver, self.tol)?.x;
                        }
                    }
                    let y = tape.constant(y);
                    let ildj = mixture_block_ildj(&y, &lw, &mu, &sd);
                    (y, ildj.neg())
                }
                _ => unreachable!("rejected at construction"),
            };
            self.finite(&y, j)?;
            total = Some(add_block_log_det(total, ld, node.dim));
            outs.push(y);
        }
        Ok((concat_cols(&outs), total.unwrap()))
    }

    /// Inverse map with explicit gates. Every node reads its parents
    /// straight from `y`, so nodes are independent of each other.
    pub fn inverse_with(&self, y: &Var, p: &ParamVars, lambda: Option<&Var>) -> Result<(Var, Var)> {
        self.check_input(y)?;
        let tape = y.tape().clone();
        let bound = self.bound_params(p);
        let blocks: Vec<Var> = (0..self.graph.nodes.len()).map(|j| self.block(y, j)).collect();
        let mut outs = Vec::with_capacity(blocks.len());
        let mut total: Option<Var> = None;
        for (j, node) in self.graph.nodes.iter().enumerate() {
            let y_j = &blocks[j];
            let parents: Vec<Var> = node.parents.iter().map(|&q| blocks[q].clone()).collect();
            let (x, ld) = match &node.dist {
                Distribution::Normal { mean, std } => {
                    let m = mean.eval(&tape, &parents, &bound)?;
                    let s = std.eval(&tape, &parents, &bound)?;
                    match lambda {
                        None => (y_j.sub(&m).div(&s), s.ln().neg()),
                        Some(lam) => {
                            let (x, slope) = gated_affine_inverse_var(y_j, &m, &s, &lam.col(j));
                            (x, slope.ln().neg())
                        }
                    }
                }
                Distribution::Mixture { components, logits, means, stds } => {
                    let (lw, mu, sd) = mixture_node_params(&bound, *components, logits, means, stds)?;
                    let mut xs = Vec::with_capacity(node.dim);
                    let mut ld: Option<Var> = None;
                    for d in 0..node.dim {
                        let (x, l) = mixture_inverse_var(&y_j.col(d), &lw[d], &mu[d], &sd[d]);
                        xs.push(x);
                        ld = Some(match ld {
                            None => l,
                            Some(t) => t.add(&l),
                        });
                    }
                    (concat_cols(&xs), ld.unwrap())
                }
                _ => unreachable!("rejected at construction"),
            };
            self.finite(&x, j)?;
            total = Some(add_block_log_det(total, ld, node.dim));
            outs.push(x);
        }
        Ok((concat_cols(&outs), total.unwrap()))
    }

    /// Joint log-density of the embedded program at each row of `batch`,
    /// using the parameter values held in `store`.
    pub fn program_log_prob(&self, store: &ParamStore, batch: &Array2<f64>) -> Result<Vec<f64>> {
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let bound = self.bound_params(&p);
        let values = probprog::split_nodes(&self.graph, &tape.constant(batch.clone()))?;
        let lp = probprog::joint_log_prob(&tape, &self.graph, &values, &bound)?;
        Ok(lp.value().column(0).to_vec())
    }

    /// Both sides of the defining identity at `sample`:
    /// `(log N(f⁻¹(sample); 0, I) + ildj, log p_program(sample))`.
    pub fn exactness_log_prob(&self, store: &ParamStore, sample: &[f64]) -> Result<(f64, f64)> {
        if self.is_gated() {
            return Err(Error::UnsupportedForGated(
                "the exactness identity holds for the plain program transform only".into(),
            ));
        }
        let row = Array2::from_shape_vec((1, sample.len()), sample.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let (x, ildj) = self.inverse_with(&tape.constant(row.clone()), &p, None)?;
        let base: f64 = x.value().iter().map(|&v| special::std_normal_log_pdf(v)).sum();
        let flow = base + ildj.value()[[0, 0]];
        Ok((flow, self.program_log_prob(store, &row)?[0]))
    }
}

type Blocks = (Vec<Var>, Vec<Var>, Vec<Var>);

fn mixture_node_params(
    bound: &BoundParams,
    k: usize,
    logits: &str,
    means: &str,
    stds: &str,
) -> Result<Blocks> {
    let (w, m, s) = (bound.get(logits)?, bound.get(means)?, bound.get(stds)?);
    let dim = w.cols() / k;
    let mut out: Blocks = (Vec::new(), Vec::new(), Vec::new());
    for d in 0..dim {
        let wd = w.slice_cols(d * k, (d + 1) * k);
        out.0.push(wd.sub(&wd.logsumexp_cols()));
        out.1.push(m.slice_cols(d * k, (d + 1) * k));
        out.2.push(s.slice_cols(d * k, (d + 1) * k));
    }
    Ok(out)
}

fn plain_mixture(log_w: &Var, means: &Var, stds: &Var) -> Result<MixtureParams> {
    MixtureParams::new(
        log_w.value().iter().map(|v| v.exp()).collect(),
        means.value().iter().copied().collect(),
        stds.value().iter().copied().collect(),
    )
}

fn mixture_block_ildj(y: &Var, lw: &[Var], mu: &[Var], sd: &[Var]) -> Var {
    let mut total: Option<Var> = None;
    for d in 0..lw.len() {
        let (_, l) = mixture_inverse_var(&y.col(d), &lw[d], &mu[d], &sd[d]);
        total = Some(match total {
            None => l,
            Some(t) => t.add(&l),
        });
    }
    total.unwrap()
}

/// Per-row log-det of a node block: `ld` is `r×1` or `r×dim`; a single
/// column stands for every coordinate of the block.
fn add_block_log_det(total: Option<Var>, ld: Var, dim: usize) -> Var {
    let ld = if ld.cols() == dim && dim > 1 {
        ld.sum_cols()
    } else if dim > 1 {
        ld.mul_scalar(dim as f64)
    } else {
        ld
    };
    match total {
        None => ld,
        Some(t) => t.add(&ld),
    }
}

impl Bijector for StructuredLayer {
    fn name(&self) -> String {
        let g = if self.is_gated() { "gated_" } else { "" };
        format!("{g}structured({})", self.graph.name)
    }
    fn dim(&self) -> usize {
        self.graph.total_dim()
    }
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.params.clone();
        if let Some((g, _)) = self.gates {
            ids.push(g);
        }
        ids
    }
    fn forward(&self, x: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        let lam = self.lambda(p);
        self.forward_with(x, p, lam.as_ref())
    }
    fn inverse(&self, y: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        let lam = self.lambda(p);
        self.inverse_with(y, p, lam.as_ref())
    }
    fn forward_is_analytic(&self) -> bool {
        !self.graph.nodes.iter().any(|n| matches!(n.dist, Distribution::Mixture { .. }))
    }
}
