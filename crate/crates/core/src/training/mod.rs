//! Maximum-likelihood and variational training loops.

mod mle;
mod optim;
mod vi;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mle::mle_train;
pub use optim::{clip_global_norm, cosine_schedule, Adam};
pub use vi::{elbo_and_grad, elbo_estimate, forward_kl_surrogate, vi_fit, vi_model, VI_ARCHITECTURES};

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Cosine annealing to zero over `total` steps. `total` may exceed the
    /// number of iterations, as in the long paper schedules.
    Cosine { total: usize },
}

impl Schedule {
    pub fn lr(&self, lr0: f64, step: usize) -> Result<f64> {
        match *self {
            Schedule::Constant => Ok(lr0),
            Schedule::Cosine { total } => cosine_schedule(lr0, step, total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Minibatch rows (MLE only; VI is full batch).
    pub batch_size: usize,
    pub lr: f64,
    /// Defaults to cosine annealing over `iterations`.
    pub schedule: Option<Schedule>,
    pub seed: u64,
    /// Iterations per trace point; each point averages the losses since the
    /// previous one.
    pub eval_every: usize,
    /// Monte Carlo samples per ELBO estimate during training.
    pub mc_samples: usize,
    /// Monte Carlo samples for the final ELBO.
    pub eval_mc_samples: usize,
    /// Global gradient-norm clip; `None` disables it.
    pub clip_norm: Option<f64>,
    /// Rows per independently differentiated chunk.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 128,
            lr: 1e-3,
            schedule: None,
            seed: 0,
            eval_every: 100,
            mc_samples: 50,
            eval_mc_samples: 2_000,
            clip_norm: Some(10.0),
            chunk: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.mc_samples == 0 || self.eval_mc_samples == 0 || self.chunk == 0 {
            return Err(Error::Config("batch, sample and chunk sizes must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if let Some(Schedule::Cosine { total: 0 }) = self.schedule {
            return Err(Error::Config("cosine schedule needs total > 0".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule.unwrap_or(Schedule::Cosine { total: self.iterations })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub metric: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `"nll"` or `"neg_elbo"`.
    pub metric_name: String,
    pub final_metric: f64,
    pub trace: Vec<TracePoint>,
    pub wall_ms: f64,
    pub param_count: usize,
    pub seed: u64,
    /// Secondary metrics, e.g. the forward-KL surrogate.
    pub extra: BTreeMap<String, f64>,
}

impl RunResult {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        write_trace_csv(&self.trace, path)
    }
}

pub fn write_trace_csv(trace: &[TracePoint], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,metric,lr,wall_ms")?;
    for p in trace {
        writeln!(f, "{},{:?},{:?},{:.3}", p.iteration, p.metric, p.lr, p.wall_ms)?;
    }
    f.flush()?;
    Ok(())
}

/// A training error together with the trace recorded before it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFailure {
    pub error: Error,
    pub trace: Vec<TracePoint>,
    pub iteration: usize,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training stopped at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for TrainFailure {}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        Self { error, trace: Vec::new(), iteration: 0 }
    }
}

/// Running loss average between trace points.
#[derive(Default)]
pub(crate) struct TraceRecorder {
    trace: Vec<TracePoint>,
    sum: f64,
    count: usize,
}

impl TraceRecorder {
    pub(crate) fn push(&mut self, loss: f64) {
        self.sum += loss;
        self.count += 1;
    }

    pub(crate) fn maybe_emit(&mut self, iteration: usize, every: usize, last: bool, lr: f64, started: std::time::Instant) {
        if self.count > 0 && ((iteration + 1) % every == 0 || last) {
            self.trace.push(TracePoint {
                iteration: iteration + 1,
                metric: self.sum / self.count as f64,
                lr,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            self.sum = 0.0;
            self.count = 0;
        }
    }

    pub(crate) fn fail(self, error: Error, iteration: usize) -> TrainFailure {
        TrainFailure { error, trace: self.trace, iteration }
    }

    pub(crate) fn finish(self) -> Vec<TracePoint> {
        self.trace
    }
}
