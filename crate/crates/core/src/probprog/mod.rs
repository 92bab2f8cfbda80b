//! Fixed-structure probabilistic programs as DAGs of conditional
//! distributions: validation, joint density and ancestral sampling.

pub mod density;
pub mod file;
pub mod graph;
pub mod link;

pub use density::{
    ancestral_sample, joint_log_prob, joint_log_prob_batch, joint_log_prob_flat, node_log_prob,
    split_nodes, topological_order,
};
pub use file::{load_program, parse_program};
pub use graph::{
    BoundParams, Distribution, GraphIssue, GraphParam, NodeSpec, ParamTransform, ProgramGraph,
};
pub use link::{LinkExpr, ParamLookup};

/// Shorthand for a link parsed from a literal known to be valid.
pub fn link(src: &str) -> LinkExpr {
    LinkExpr::parse(src).unwrap_or_else(|e| panic!("bad link '{src}': {e}"))
}
