use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite loss: first non-finite value at tape node {node} ({op})")]
    NonFiniteLoss { node: usize, op: &'static str },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid bracket [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("root finder did not converge after {iterations} iterations (best estimate {best})")]
    Convergence { best: f64, iterations: usize },

    #[error("degenerate secant step: f(x_(n-1)) == f(x_(n-2)) = {value} at x = {x}")]
    DegenerateSecant { x: f64, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid permutation: {0}")]
    Perm(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cycle detected in program graph at node {0}")]
    Cycle(usize),

    #[error("operation not supported for gated layers: {0}")]
    UnsupportedForGated(String),

    #[error("unsupported distribution in structured layer: {0}")]
    UnsupportedDistribution(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
