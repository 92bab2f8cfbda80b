//! Joint density and ancestral sampling for [`ProgramGraph`]s.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{special, Tape, Var};
use crate::probprog::graph::{BoundParams, Distribution, ProgramGraph};

/// Splits a `B×total_dim` batch into per-node column blocks.
pub fn split_nodes(graph: &ProgramGraph, flat: &Var) -> Result<Vec<Var>> {
    if flat.cols() != graph.total_dim() {
        return Err(Error::Shape(format!(
            "graph '{}' has total dim {}, got {} columns",
            graph.name,
            graph.total_dim(),
            flat.cols()
        )));
    }
    let mut off = 0;
    Ok(graph
        .nodes
        .iter()
        .map(|n| {
            let v = flat.slice_cols(off, off + n.dim);
            off += n.dim;
            v
        })
        .collect())
}

/// Link outputs for Gaussian-family nodes: `(mean, std)`, each broadcastable
/// to `B×dim`.
pub fn gaussian_params(
    tape: &Tape,
    graph: &ProgramGraph,
    node: usize,
    parents: &[Var],
    params: &BoundParams,
) -> Result<(Var, Var)> {
    match &graph.nodes[node].dist {
        Distribution::Normal { mean, std } | Distribution::LogNormal { mean, std } => Ok((
            mean.eval(tape, parents, params)?,
            std.eval(tape, parents, params)?,
        )),
        other => Err(Error::UnsupportedDistribution(format!(
            "node {node} is {}, not Gaussian",
            other.kind_name()
        ))),
    }
}

fn parent_values(graph: &ProgramGraph, node: usize, values: &[Var]) -> Vec<Var> {
    graph.nodes[node].parents.iter().map(|&p| values[p].clone()).collect()
}

/// Per-coordinate mixture log-density of `x` (`B×dim`), summed to `B×1`.
pub fn mixture_log_prob(
    x: &Var,
    components: usize,
    logits: &Var,
    means: &Var,
    stds: &Var,
) -> Var {
    let k = components;
    let mut total: Option<Var> = None;
    for d in 0..x.cols() {
        let w = logits.slice_cols(d * k, (d + 1) * k);
        let log_w = w.sub(&w.logsumexp_cols());
        let comp = x
            .col(d)
            .normal_log_pdf(&means.slice_cols(d * k, (d + 1) * k), &stds.slice_cols(d * k, (d + 1) * k));
        let lp = comp.add(&log_w).logsumexp_cols();
        total = Some(match total {
            None => lp,
            Some(t) => t.add(&lp),
        });
    }
    total.expect("mixture node with dim 0")
}

/// `log p_j(x_j | x_{<j})` for one node, as `B×1`.
pub fn node_log_prob(
    tape: &Tape,
    graph: &ProgramGraph,
    node: usize,
    values: &[Var],
    params: &BoundParams,
) -> Result<Var> {
    let spec = &graph.nodes[node];
    let x = &values[node];
    if x.cols() != spec.dim {
        return Err(Error::Shape(format!(
            "node '{}' expects dim {}, got {}",
            spec.name,
            spec.dim,
            x.cols()
        )));
    }
    let parents = parent_values(graph, node, values);
    let lp = match &spec.dist {
        Distribution::Normal { mean, std } => {
            let m = mean.eval(tape, &parents, params)?;
            let s = std.eval(tape, &parents, params)?;
            x.normal_log_pdf(&m, &s)
        }
        Distribution::LogNormal { mean, std } => {
            let m = mean.eval(tape, &parents, params)?;
            let s = std.eval(tape, &parents, params)?;
            let lx = x.ln();
            lx.normal_log_pdf(&m, &s).sub(&lx)
        }
        Distribution::Bernoulli { logit } => {
            let l = logit.eval(tape, &parents, params)?;
            x.mul(&l).sub(&l.softplus())
        }
        Distribution::Mixture { components, logits, means, stds } => {
            return Ok(mixture_log_prob(
                x,
                *components,
                params.get(logits)?,
                params.get(means)?,
                params.get(stds)?,
            ))
        }
    };
    let lp = if lp.cols() == 1 { lp } else { lp.sum_cols() };
    // A node whose value and links are all row-constant still contributes
    // once per batch row.
    Ok(if lp.rows() < x.rows() { lp.add(&tape.constant(Array2::zeros((x.rows(), 1)))) } else { lp })
}

/// `Σ_j log p_j(x_j | x_{<j})`, one entry per batch row (`B×1`).
pub fn joint_log_prob(
    tape: &Tape,
    graph: &ProgramGraph,
    values: &[Var],
    params: &BoundParams,
) -> Result<Var> {
    if values.len() != graph.nodes.len() {
        return Err(Error::Shape(format!(
            "graph '{}' has {} nodes, got {} values",
            graph.name,
            graph.nodes.len(),
            values.len()
        )));
    }
    let mut total: Option<Var> = None;
    for j in 0..graph.nodes.len() {
        let lp = node_log_prob(tape, graph, j, values, params)?;
        total = Some(match total {
            None => lp,
            Some(t) => t.add(&lp),
        });
    }
    Ok(total.expect("validated graph has nodes"))
}

/// Joint log-density of each row of a flat `B×total_dim` batch, using the
/// graph's stored parameter values.
pub fn joint_log_prob_batch(graph: &ProgramGraph, batch: &Array2<f64>) -> Result<Vec<f64>> {
    let tape = Tape::no_grad();
    let params = BoundParams::constants(graph, &tape);
    let flat = tape.constant(batch.clone());
    let values = split_nodes(graph, &flat)?;
    let lp = joint_log_prob(&tape, graph, &values, &params)?;
    Ok(lp.value().column(0).to_vec())
}

/// Joint log-density of one flat sample.
pub fn joint_log_prob_flat(graph: &ProgramGraph, sample: &[f64]) -> Result<f64> {
    let batch = Array2::from_shape_vec((1, sample.len()), sample.to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(joint_log_prob_batch(graph, &batch)?[0])
}

/// Draws `n` joint samples in topological order; returns `n×total_dim`.
pub fn ancestral_sample<R: Rng + ?Sized>(
    graph: &ProgramGraph,
    rng: &mut R,
    n: usize,
) -> Result<Array2<f64>> {
    let tape = Tape::no_grad();
    let params = BoundParams::constants(graph, &tape);
    let offsets = graph.offsets();
    let mut out = Array2::zeros((n, graph.total_dim()));
    let mut values: Vec<Var> = Vec::with_capacity(graph.nodes.len());
    for (j, spec) in graph.nodes.iter().enumerate() {
        let parents = parent_values(graph, j, &values);
        let mut x = Array2::zeros((n, spec.dim));
        match &spec.dist {
            Distribution::Normal { mean, std } | Distribution::LogNormal { mean, std } => {
                let m = mean.eval(&tape, &parents, &params)?;
                let sd = std.eval(&tape, &parents, &params)?;
                let m = m.value().broadcast((n, spec.dim)).ok_or_else(|| {
                    Error::Shape(format!("node '{}': mean link shape", spec.name))
                })?;
                let sd = sd.value().broadcast((n, spec.dim)).ok_or_else(|| {
                    Error::Shape(format!("node '{}': std link shape", spec.name))
                })?;
                let lognormal = matches!(spec.dist, Distribution::LogNormal { .. });
                for ((v, &mu), &sig) in x.iter_mut().zip(m.iter()).zip(sd.iter()) {
                    let eps: f64 = rng.sample(StandardNormal);
                    let g = mu + sig * eps;
                    *v = if lognormal { g.exp() } else { g };
                }
            }
            Distribution::Bernoulli { logit } => {
                let l = logit.eval(&tape, &parents, &params)?;
                let l = l.value().broadcast((n, spec.dim)).ok_or_else(|| {
                    Error::Shape(format!("node '{}': logit link shape", spec.name))
                })?;
                for (v, &li) in x.iter_mut().zip(l.iter()) {
                    let u: f64 = rng.random();
                    *v = if u < special::sigmoid(li) { 1.0 } else { 0.0 };
                }
            }
            Distribution::Mixture { components, logits, means, stds } => {
                let k = *components;
                let w = params.get(logits)?.value().clone();
                let mu = params.get(means)?.value().clone();
                let sd = params.get(stds)?.value().clone();
                for d in 0..spec.dim {
                    let row = w.slice(s![0, d * k..(d + 1) * k]);
                    let lse = special::logsumexp(row.iter().copied());
                    let probs: Vec<f64> = row.iter().map(|&v| (v - lse).exp()).collect();
                    for r in 0..n {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut c = k - 1;
                        for (i, p) in probs.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                c = i;
                                break;
                            }
                        }
                        let eps: f64 = rng.sample(StandardNormal);
                        x[[r, d]] = mu[[0, d * k + c]] + sd[[0, d * k + c]] * eps;
                    }
                }
            }
        }
        out.slice_mut(s![.., offsets[j]..offsets[j] + spec.dim]).assign(&x);
        values.push(tape.constant(x));
    }
    Ok(out)
}

/// Identity permutation for stored (pre-sorted) graphs; a parent at or after
/// its child means the stored order cannot be topological and is reported as
/// a cycle at that node.
pub fn topological_order(graph: &ProgramGraph) -> Result<Vec<usize>> {
    for (j, n) in graph.nodes.iter().enumerate() {
        if n.parents.iter().any(|&p| p >= j) {
            return Err(Error::Cycle(j));
        }
    }
    Ok((0..graph.nodes.len()).collect())
}
