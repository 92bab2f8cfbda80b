//! TOML program description files.
//!
//! ```toml
//! name = "pendulum"
//!
//! [[param]]
//! name = "s"
//! value = [0.1]          # constrained value
//! transform = "softplus" # or "identity" (default)
//! trainable = true       # default false
//!
//! [[node]]
//! name = "x0"
//! dist = "normal"
//! link = { mean = "0", std = "1" }
//!
//! [[node]]
//! name = "x1"
//! parents = ["x0"]
//! dist = "normal"
//! link = { mean = "p0 + 0.1 * tanh(p0)", std = "s" }
//! dim = 1
//! ```
//!
//! `dist` is one of `normal`, `lognormal` (links `mean`, `std` on the log
//! scale), `bernoulli` (link `logit`) or `mixture` (root only; link keys
//! `logits`, `means`, `stds` name parameters and `components` is required).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::numerics::special;
use crate::probprog::graph::{Distribution, GraphParam, NodeSpec, ParamTransform, ProgramGraph};
use crate::probprog::link::LinkExpr;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileParam {
    name: String,
    value: Vec<f64>,
    #[serde(default)]
    transform: ParamTransform,
    #[serde(default)]
    trainable: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    name: String,
    #[serde(default)]
    parents: Vec<String>,
    dist: String,
    #[serde(default)]
    link: BTreeMap<String, String>,
    #[serde(default)]
    components: Option<usize>,
    #[serde(default = "one")]
    dim: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramFile {
    name: String,
    #[serde(default, rename = "param")]
    params: Vec<FileParam>,
    #[serde(rename = "node")]
    nodes: Vec<FileNode>,
}

fn take_link(node: &str, link: &mut BTreeMap<String, String>, key: &str) -> Result<String> {
    link.remove(key)
        .ok_or_else(|| Error::Config(format!("node '{node}': missing link key '{key}'")))
}

/// Parses and validates a program description.
pub fn parse_program(src: &str) -> Result<ProgramGraph> {
    let file: ProgramFile = toml::from_str(src)?;
    let mut graph = ProgramGraph::new(file.name);
    for p in file.params {
        let raw = match p.transform {
            ParamTransform::Identity => p.value,
            ParamTransform::Softplus => {
                if let Some(v) = p.value.iter().find(|v| **v <= 0.0) {
                    return Err(Error::Config(format!(
                        "parameter '{}': softplus value must be positive, got {v}",
                        p.name
                    )));
                }
                p.value.into_iter().map(special::softplus_inverse).collect()
            }
        };
        graph.add_param(GraphParam { name: p.name, raw, transform: p.transform, trainable: p.trainable });
    }
    for n in file.nodes {
        let mut parents = Vec::with_capacity(n.parents.len());
        for pname in &n.parents {
            // parents must be declared earlier in the file
            let idx = graph
                .node_index(pname)
                .ok_or_else(|| Error::Config(format!("node '{}': unknown parent '{pname}'", n.name)))?;
            parents.push(idx);
        }
        let mut link = n.link;
        let dist = match n.dist.as_str() {
            "normal" | "lognormal" => {
                let mean = LinkExpr::parse(&take_link(&n.name, &mut link, "mean")?)?;
                let std = LinkExpr::parse(&take_link(&n.name, &mut link, "std")?)?;
                if n.dist == "normal" {
                    Distribution::Normal { mean, std }
                } else {
                    Distribution::LogNormal { mean, std }
                }
            }
            "bernoulli" => Distribution::Bernoulli {
                logit: LinkExpr::parse(&take_link(&n.name, &mut link, "logit")?)?,
            },
            "mixture" => Distribution::Mixture {
                components: n.components.ok_or_else(|| {
                    Error::Config(format!("node '{}': mixture needs 'components'", n.name))
                })?,
                logits: take_link(&n.name, &mut link, "logits")?,
                means: take_link(&n.name, &mut link, "means")?,
                stds: take_link(&n.name, &mut link, "stds")?,
            },
            other => {
                return Err(Error::Config(format!(
                    "node '{}': unknown distribution '{other}'",
                    n.name
                )))
            }
        };
        if let Some(k) = link.keys().next() {
            return Err(Error::Config(format!("node '{}': unknown link key '{k}'", n.name)));
        }
        graph.push(NodeSpec { name: n.name, parents, dist, dim: n.dim });
    }
    graph.check()?;
    Ok(graph)
}

pub fn load_program(path: &Path) -> Result<ProgramGraph> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_program(&src)
}
