//! Named program structures.

use crate::bijectors::mixture::even_grid;
use crate::error::{Error, Result};
use crate::numerics::special::softplus_inverse;
use crate::probprog::{link, Distribution, LinkExpr, GraphParam, NodeSpec, ParamTransform, ProgramGraph};

/// Name of the shared innovation scale in the chain structures.
pub const SIGMA_S: &str = "sigma_s";

fn shared_scale(init: f64) -> Result<GraphParam> {
    if !(init > 0.0 && init.is_finite()) {
        return Err(Error::Config(format!("initial sigma_s must be positive, got {init}")));
    }
    Ok(GraphParam::trainable(SIGMA_S, vec![softplus_inverse(init)], ParamTransform::Softplus))
}

/// Random walk: `x_0 ~ N(0, σ_s²)`, `x_t ~ N(x_{t−1}, σ_s²)`.
pub fn continuity(t: usize, sigma_init: f64) -> Result<ProgramGraph> {
    continuity_channels(t, 1, sigma_init)
}

/// [`continuity`] applied to each of `c` channels stored interleaved
/// (`x_{0,0}, …, x_{0,c−1}, x_{1,0}, …`), with one shared σ_s.
pub fn continuity_channels(t: usize, c: usize, sigma_init: f64) -> Result<ProgramGraph> {
    if t < 1 || c < 1 {
        return Err(Error::Config(format!("continuity structure needs T >= 1 and at least one channel, got T={t}")));
    }
    let mut g = ProgramGraph::new(format!("continuity-{t}"));
    g.add_param(shared_scale(sigma_init)?);
    for i in 0..t {
        for ch in 0..c {
            let node = if i == 0 {
                NodeSpec::new(node_name(i, ch, c), vec![], Distribution::normal(link("0"), link(SIGMA_S)))
            } else {
                NodeSpec::new(node_name(i, ch, c), vec![(i - 1) * c + ch], Distribution::normal(link("p0"), link(SIGMA_S)))
            };
            g.push(node);
        }
    }
    Ok(g)
}

/// Second-order chain: two standard-normal starting points, then
/// `x_t ~ N(2x_{t−1} − x_{t−2}, σ_s²)`.
pub fn smoothness(t: usize, sigma_init: f64) -> Result<ProgramGraph> {
    smoothness_channels(t, 1, sigma_init)
}

/// [`smoothness`] per interleaved channel.
pub fn smoothness_channels(t: usize, c: usize, sigma_init: f64) -> Result<ProgramGraph> {
    if t < 2 || c < 1 {
        return Err(Error::Config(format!("smoothness structure needs T >= 2 and at least one channel, got T={t}")));
    }
    let mut g = ProgramGraph::new(format!("smoothness-{t}"));
    g.add_param(shared_scale(sigma_init)?);
    for i in 0..t {
        for ch in 0..c {
            let node = if i < 2 {
                NodeSpec::new(node_name(i, ch, c), vec![], Distribution::normal(link("0"), link("1")))
            } else {
                NodeSpec::new(
                    node_name(i, ch, c),
                    vec![(i - 1) * c + ch, (i - 2) * c + ch],
                    Distribution::normal(link("2 * p0 - p1"), link(SIGMA_S)),
                )
            };
            g.push(node);
        }
    }
    Ok(g)
}

fn node_name(t: usize, ch: usize, c: usize) -> String {
    if c == 1 {
        format!("x{t}")
    } else {
        format!("x{t}_{ch}")
    }
}

/// `m` populations: `m_k ~ N(0, σ²)` followed by its `n − 1` members
/// `x_jk ~ N(m_k, ν²)`. Nodes are grouped by population.
pub fn hierarchical(m: usize, n: usize, sigma: f64, nu: f64) -> Result<ProgramGraph> {
    if m < 1 || n < 2 {
        return Err(Error::Config(format!("hierarchical structure needs m >= 1 and n >= 2, got m={m}, n={n}")));
    }
    if !(sigma > 0.0 && nu > 0.0) {
        return Err(Error::Config("hierarchical scales must be positive".into()));
    }
    let mut g = ProgramGraph::new(format!("hierarchical-{m}x{n}"));
    for k in 0..m {
        let root = g.push(NodeSpec::new(
            format!("m{k}"),
            vec![],
            Distribution::normal(link("0"), LinkExpr::constant(sigma)),
        ));
        for j in 1..n {
            g.push(NodeSpec::new(
                format!("x{k}_{j}"),
                vec![root],
                Distribution::normal(link("p0"), LinkExpr::constant(nu)),
            ));
        }
    }
    Ok(g)
}

/// `dim` independent `K`-component mixtures with means evenly spaced on
/// `[lo, hi]`, equal weights and a common initial std.
pub fn mixture(dim: usize, k: usize, lo: f64, hi: f64, std: f64) -> Result<ProgramGraph> {
    if dim < 1 || k < 1 {
        return Err(Error::Config(format!("mixture structure needs dim >= 1 and K >= 1, got dim={dim}, K={k}")));
    }
    if !(std > 0.0) || !(lo <= hi) {
        return Err(Error::Config(format!("bad mixture initialisation: [{lo}, {hi}], std {std}")));
    }
    let grid = even_grid(lo, hi, k);
    let mut g = ProgramGraph::new(format!("mixture-{dim}x{k}"));
    for d in 0..dim {
        let (w, mu, s) = (format!("logits{d}"), format!("means{d}"), format!("stds{d}"));
        g.add_param(GraphParam::trainable(&w, vec![0.0; k], ParamTransform::Identity));
        g.add_param(GraphParam::trainable(&mu, grid.clone(), ParamTransform::Identity));
        g.add_param(GraphParam::trainable(&s, vec![softplus_inverse(std); k], ParamTransform::Softplus));
        g.push(NodeSpec::new(
            format!("z{d}"),
            vec![],
            Distribution::Mixture { components: k, logits: w, means: mu, stds: s },
        ));
    }
    Ok(g)
}
