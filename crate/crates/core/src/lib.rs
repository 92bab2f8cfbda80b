//! Embedded-model flows.
//!
//! Fixed-structure probabilistic programs ([`probprog`]) are compiled into
//! invertible structured layers ([`structured`]), optionally gated, and
//! stacked with masked autoregressive layers ([`bijectors`]) into flow
//! models ([`flows`]). [`training`] fits them by maximum likelihood or
//! variational inference on the synthetic suites in [`data`].

pub mod error;
pub mod exec;
pub mod numerics;
pub mod probprog;
pub mod bijectors;
pub mod structured;
pub mod flows;
pub mod data;
pub mod training;
pub mod checks;

pub use error::{Error, Result};
pub use exec::Execution;
