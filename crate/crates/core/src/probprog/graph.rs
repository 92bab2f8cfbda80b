use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};
use crate::probprog::link::{LinkExpr, ParamLookup};

/// How a stored (unconstrained) parameter maps to the value links see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ParamTransform {
    #[default]
    Identity,
    Softplus,
}

/// A named, possibly trainable, parameter of a program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphParam {
    pub name: String,
    /// Unconstrained storage.
    pub raw: Vec<f64>,
    #[serde(default)]
    pub transform: ParamTransform,
    #[serde(default)]
    pub trainable: bool,
}

impl GraphParam {
    pub fn fixed(name: &str, values: Vec<f64>) -> Self {
        Self { name: name.into(), raw: values, transform: ParamTransform::Identity, trainable: false }
    }

    pub fn trainable(name: &str, raw: Vec<f64>, transform: ParamTransform) -> Self {
        Self { name: name.into(), raw, transform, trainable: true }
    }

    /// Strictly positive after transform, whatever the stored value.
    pub fn positive_by_construction(&self) -> bool {
        match self.transform {
            ParamTransform::Softplus => true,
            ParamTransform::Identity => !self.trainable && self.raw.iter().all(|&v| v > 0.0),
        }
    }
}

/// Conditional distribution of one node given its link outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distribution {
    /// `N(mean, std²)`.
    Normal { mean: LinkExpr, std: LinkExpr },
    /// `ln x ~ N(mean, std²)`.
    LogNormal { mean: LinkExpr, std: LinkExpr },
    /// Independent `K`-component Gaussian mixture per coordinate. The named
    /// parameters hold `dim × K` entries (row-major): `logits` under identity
    /// transform, `means` under identity, `stds` under softplus.
    Mixture { components: usize, logits: String, means: String, stds: String },
    /// `x ∈ {0, 1}` with success probability `sigmoid(logit)`.
    Bernoulli { logit: LinkExpr },
}

impl Distribution {
    pub fn normal(mean: LinkExpr, std: LinkExpr) -> Self {
        Distribution::Normal { mean, std }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Distribution::Normal { .. } => "normal",
            Distribution::LogNormal { .. } => "lognormal",
            Distribution::Mixture { .. } => "mixture",
            Distribution::Bernoulli { .. } => "bernoulli",
        }
    }

    pub fn links(&self) -> Vec<&LinkExpr> {
        match self {
            Distribution::Normal { mean, std } | Distribution::LogNormal { mean, std } => vec![mean, std],
            Distribution::Bernoulli { logit } => vec![logit],
            Distribution::Mixture { .. } => vec![],
        }
    }

    /// Number of parent slots consumed by the link expressions.
    pub fn link_arity(&self) -> usize {
        self.links().iter().map(|l| l.arity()).max().unwrap_or(0)
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Distribution::Mixture { logits, means, stds, .. } => {
                vec![logits.clone(), means.clone(), stds.clone()]
            }
            _ => self.links().iter().flat_map(|l| l.param_names()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub parents: Vec<usize>,
    pub dist: Distribution,
    pub dim: usize,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, parents: Vec<usize>, dist: Distribution) -> Self {
        Self { name: name.into(), parents, dist, dim: 1 }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }
}

/// A fixed-structure probabilistic program: nodes stored in sampling order,
/// each conditioned on earlier nodes through its link expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramGraph {
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub params: Vec<GraphParam>,
}

/// One structural problem found by [`ProgramGraph::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum GraphIssue {
    Empty,
    DuplicateName(String),
    DuplicateParam(String),
    ZeroDim { node: usize },
    ForwardReference { node: usize, parent: usize },
    LinkArity { node: usize, parents: usize, arity: usize },
    UnknownParam { node: usize, param: String },
    NonPositiveStd { node: usize },
    ParentDim { node: usize, parent: usize },
    MixtureShape { node: usize, param: String, expected: usize, found: usize },
    MixtureParamTransform { node: usize, param: String },
}

impl fmt::Display for GraphIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphIssue::Empty => write!(f, "graph has no nodes"),
            GraphIssue::DuplicateName(n) => write!(f, "duplicate node name '{n}'"),
            GraphIssue::DuplicateParam(n) => write!(f, "duplicate parameter name '{n}'"),
            GraphIssue::ZeroDim { node } => write!(f, "node {node}: dim must be at least 1"),
            GraphIssue::ForwardReference { node, parent } => {
                write!(f, "node {node}: forward reference to parent {parent}")
            }
            GraphIssue::LinkArity { node, parents, arity } => write!(
                f,
                "node {node}: link arity {arity} does not match {parents} parent(s)"
            ),
            GraphIssue::UnknownParam { node, param } => {
                write!(f, "node {node}: unknown parameter '{param}'")
            }
            GraphIssue::NonPositiveStd { node } => {
                write!(f, "node {node}: std link is not positive by construction")
            }
            GraphIssue::ParentDim { node, parent } => write!(
                f,
                "node {node}: parent {parent} dim must be 1 or equal to the node dim"
            ),
            GraphIssue::MixtureShape { node, param, expected, found } => write!(
                f,
                "node {node}: mixture parameter '{param}' has {found} entries, expected {expected}"
            ),
            GraphIssue::MixtureParamTransform { node, param } => write!(
                f,
                "node {node}: mixture std parameter '{param}' must use the softplus transform"
            ),
        }
    }
}

/// Constant-valued lookup over a graph's stored parameters.
struct StoredParams<'a> {
    graph: &'a ProgramGraph,
}

impl ParamLookup for StoredParams<'_> {
    fn param(&self, name: &str) -> Result<Var> {
        Err(Error::Config(format!("parameter '{name}' is not bound")))
    }
    fn is_positive(&self, name: &str) -> bool {
        self.graph
            .param(name)
            .map(|p| p.positive_by_construction())
            .unwrap_or(false)
    }
}

impl ProgramGraph {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), nodes: Vec::new(), params: Vec::new() }
    }

    pub fn push(&mut self, node: NodeSpec) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn add_param(&mut self, p: GraphParam) {
        self.params.push(p);
    }

    pub fn param(&self, name: &str) -> Option<&GraphParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn total_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.dim).sum()
    }

    /// Column offset of each node in the flat layout (nodes concatenated in
    /// storage order).
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.nodes
            .iter()
            .map(|n| {
                let o = off;
                off += n.dim;
                o
            })
            .collect()
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parents.contains(&node))
            .map(|(i, _)| i)
            .collect()
    }

    /// All structural problems, not just the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<GraphIssue>> {
        let mut issues = Vec::new();
        if self.nodes.is_empty() {
            issues.push(GraphIssue::Empty);
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.name.as_str()) {
                issues.push(GraphIssue::DuplicateName(n.name.clone()));
            }
        }
        let mut seen = HashSet::new();
        for p in &self.params {
            if !seen.insert(p.name.as_str()) {
                issues.push(GraphIssue::DuplicateParam(p.name.clone()));
            }
        }
        let lookup = StoredParams { graph: self };
        for (j, n) in self.nodes.iter().enumerate() {
            if n.dim == 0 {
                issues.push(GraphIssue::ZeroDim { node: j });
            }
            for &p in &n.parents {
                if p >= j {
                    issues.push(GraphIssue::ForwardReference { node: j, parent: p });
                } else if self.nodes[p].dim != 1 && self.nodes[p].dim != n.dim {
                    issues.push(GraphIssue::ParentDim { node: j, parent: p });
                }
            }
            let arity = n.dist.link_arity();
            if arity != n.parents.len() {
                issues.push(GraphIssue::LinkArity { node: j, parents: n.parents.len(), arity });
            }
            for name in n.dist.param_names() {
                if self.param(&name).is_none() {
                    issues.push(GraphIssue::UnknownParam { node: j, param: name });
                }
            }
            match &n.dist {
                Distribution::Normal { std, .. } | Distribution::LogNormal { std, .. } => {
                    if !std.is_positive(&lookup) {
                        issues.push(GraphIssue::NonPositiveStd { node: j });
                    }
                }
                Distribution::Mixture { components, logits, means, stds } => {
                    let expected = components * n.dim;
                    for name in [logits, means, stds] {
                        if let Some(p) = self.param(name) {
                            if p.raw.len() != expected {
                                issues.push(GraphIssue::MixtureShape {
                                    node: j,
                                    param: name.clone(),
                                    expected,
                                    found: p.raw.len(),
                                });
                            }
                        }
                    }
                    if let Some(p) = self.param(stds) {
                        if p.transform != ParamTransform::Softplus {
                            issues.push(GraphIssue::MixtureParamTransform {
                                node: j,
                                param: stds.clone(),
                            });
                        }
                    }
                }
                Distribution::Bernoulli { .. } => {}
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// Validation folded into a single `Config` error.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(|issues| {
            Error::Config(
                issues
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })
    }

    /// Subgraph on the given node indices (which must be closed under
    /// parents); parents are re-indexed.
    pub fn subgraph(&self, keep: &[usize]) -> Result<ProgramGraph> {
        let mut map = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut g = ProgramGraph::new(self.name.clone());
        g.params = self.params.clone();
        for &old in keep {
            let n = &self.nodes[old];
            let parents = n
                .parents
                .iter()
                .map(|&p| {
                    if map[p] == usize::MAX {
                        Err(Error::Config(format!(
                            "subgraph drops parent {p} of kept node {old}"
                        )))
                    } else {
                        Ok(map[p])
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            g.nodes.push(NodeSpec { parents, ..n.clone() });
        }
        Ok(g)
    }
}

/// Graph parameters placed on a tape, with transforms applied.
#[derive(Clone)]
pub struct BoundParams {
    names: Vec<String>,
    /// Transformed values (`1×len`).
    values: Vec<Var>,
    positive: Vec<bool>,
}

impl BoundParams {
    /// Binds raw parameter vars (one per graph parameter, `1×len`).
    pub fn from_raw(graph: &ProgramGraph, raw: &[Var]) -> Self {
        assert_eq!(raw.len(), graph.params.len());
        let values = graph
            .params
            .iter()
            .zip(raw)
            .map(|(p, v)| match p.transform {
                ParamTransform::Identity => v.clone(),
                ParamTransform::Softplus => v.softplus(),
            })
            .collect();
        Self {
            names: graph.params.iter().map(|p| p.name.clone()).collect(),
            values,
            positive: graph.params.iter().map(|p| p.positive_by_construction()).collect(),
        }
    }

    /// Binds the graph's stored values as constants.
    pub fn constants(graph: &ProgramGraph, tape: &Tape) -> Self {
        let raw: Vec<Var> = graph.params.iter().map(|p| tape.row(&p.raw)).collect();
        Self::from_raw(graph, &raw)
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }
}

impl ParamLookup for BoundParams {
    fn param(&self, name: &str) -> Result<Var> {
        self.get(name).cloned()
    }
    fn is_positive(&self, name: &str) -> bool {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.positive[i])
            .unwrap_or(false)
    }
}
