use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bijectors::{Bijector, ParamStore, ParamVars};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::flows::arch::{build_layers, ArchitectureSpec, Orientation};
use crate::numerics::special::HALF_LN_2PI;
use crate::numerics::{compute_gradients, Tape, Tensor, Var};

/// Rows per independently evaluated chunk. Fixed so that results do not
/// depend on the thread count.
pub const EVAL_CHUNK: usize = 512;

const CHECKPOINT_FORMAT: &str = "emflow-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// A stack of invertible layers over a standard-normal base, ordered from
/// the base towards the data space: `y = f_{m−1} ∘ … ∘ f_0(z)`.
pub struct FlowModel {
    spec: Option<ArchitectureSpec>,
    dim: usize,
    layers: Vec<Box<dyn Bijector>>,
    store: ParamStore,
    orientation: Orientation,
}

/// `Σ log N(x_i; 0, 1)` per row.
pub fn base_log_prob(x: &Var) -> Var {
    x.square().sum_cols().mul_scalar(-0.5).add_scalar(-(x.cols() as f64) * HALF_LN_2PI)
}

impl FlowModel {
    pub fn assemble(spec: &ArchitectureSpec, dim: usize) -> Result<Self> {
        let mut store = ParamStore::new();
        let layers = build_layers(spec, dim, &mut store)?;
        Ok(Self { spec: Some(spec.clone()), dim, layers, store, orientation: spec.orientation })
    }

    /// A model from hand-built layers. `layers` may be empty.
    pub fn from_layers(dim: usize, layers: Vec<Box<dyn Bijector>>, store: ParamStore, orientation: Orientation) -> Result<Self> {
        if let Some((i, l)) = layers.iter().enumerate().find(|(_, l)| l.dim() != dim) {
            return Err(Error::Shape(format!("layer {i} ({}) has dim {}, model dim is {dim}", l.name(), l.dim())));
        }
        Ok(Self { spec: None, dim, layers, store, orientation })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> Option<&ArchitectureSpec> {
        self.spec.as_ref()
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn layers(&self) -> &[Box<dyn Bijector>] {
        &self.layers
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name()).collect()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    fn check(&self, v: &Var) -> Result<()> {
        if v.cols() != self.dim {
            return Err(Error::Shape(format!("model has dim {}, got {} columns", self.dim, v.cols())));
        }
        Ok(())
    }

    fn finite(v: &Var, i: usize, layer: &dyn Bijector) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context: format!("layer {i} ({})", layer.name()) })
        }
    }

    /// Differentiable `log p(y)` per row (`B×1`).
    pub fn log_prob_var(&self, y: &Var, p: &ParamVars) -> Result<Var> {
        self.check(y)?;
        let mut x = y.clone();
        let mut total: Option<Var> = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (prev, ildj) = layer.inverse(&x, p)?;
            Self::finite(&prev, i, layer.as_ref())?;
            Self::finite(&ildj, i, layer.as_ref())?;
            x = prev;
            total = Some(match total {
                None => ildj,
                Some(t) => t.add(&ildj),
            });
        }
        let base = base_log_prob(&x);
        Ok(match total {
            None => base,
            Some(t) => base.add(&t),
        })
    }

    /// Pushes base draws `eps` through the stack. Returns the samples and
    /// their log-density under the model, both differentiable.
    pub fn sample_var(&self, eps: &Var, p: &ParamVars) -> Result<(Var, Var)> {
        self.check(eps)?;
        let mut log_q = base_log_prob(eps);
        let mut z = eps.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, fldj) = layer.forward(&z, p)?;
            Self::finite(&next, i, layer.as_ref())?;
            z = next;
            log_q = log_q.sub(&fldj);
        }
        Ok((z, log_q))
    }

    /// `log p(y)` for each row, evaluated in parallel chunks.
    pub fn log_prob(&self, y: &Array2<f64>, exec: Execution) -> Result<Vec<f64>> {
        let ranges = exec::chunk_ranges(y.nrows(), EVAL_CHUNK);
        let parts = exec::try_map_indexed(exec, ranges.len(), |c| {
            let tape = Tape::no_grad();
            let p = self.store.bind(&tape);
            let r = &ranges[c];
            let lp = self.log_prob_var(&tape.constant(y.slice(s![r.clone(), ..]).to_owned()), &p)?;
            let lp = lp.value();
            Ok::<_, Error>((0..r.len()).map(|i| lp[[i.min(lp.nrows() - 1), 0]]).collect::<Vec<f64>>())
        })?;
        Ok(parts.concat())
    }

    /// Mean negative log-likelihood.
    pub fn nll(&self, y: &Array2<f64>, exec: Execution) -> Result<f64> {
        let lp = self.log_prob(y, exec)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Mean NLL of `batch` and its gradient with respect to every stored
    /// tensor (zeros for frozen ones). Chunks of `chunk` rows are
    /// differentiated independently and summed in order.
    pub fn nll_and_grad(&self, batch: &Array2<f64>, exec: Execution, chunk: usize) -> Result<(f64, Vec<Tensor>)> {
        let n = batch.nrows();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let ranges = exec::chunk_ranges(n, chunk);
        let scale = -1.0 / n as f64;
        let parts = exec::try_map_indexed(exec, ranges.len(), |c| {
            let tape = Tape::new();
            let p = self.store.bind(&tape);
            let y = tape.constant(batch.slice(s![ranges[c].clone(), ..]).to_owned());
            let loss = self.log_prob_var(&y, &p)?.sum().mul_scalar(scale);
            let g = compute_gradients(&loss, p.all())?;
            Ok::<_, Error>((loss.item(), g))
        })?;
        Ok(sum_parts(parts))
    }

    /// `n` draws, deterministic for a given `rng` state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, exec: Execution) -> Result<Array2<f64>> {
        let eps = Array2::from_shape_fn((n, self.dim), |_| StandardNormal.sample(rng));
        self.push_forward(&eps, exec)
    }

    /// Values of the forward map for fixed base draws.
    pub fn push_forward(&self, eps: &Array2<f64>, exec: Execution) -> Result<Array2<f64>> {
        let ranges = exec::chunk_ranges(eps.nrows(), EVAL_CHUNK);
        let parts = exec::try_map_indexed(exec, ranges.len(), |c| {
            let tape = Tape::no_grad();
            let p = self.store.bind(&tape);
            let e = tape.constant(eps.slice(s![ranges[c].clone(), ..]).to_owned());
            Ok::<_, Error>(self.sample_var(&e, &p)?.0.value().clone())
        })?;
        let mut out = Array2::zeros((eps.nrows(), self.dim));
        for (r, part) in ranges.iter().zip(parts) {
            out.slice_mut(s![r.clone(), ..]).assign(&part);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let spec = self
            .spec
            .clone()
            .ok_or_else(|| Error::Config("only assembled models can be checkpointed".into()))?;
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec,
            dim: self.dim,
            params: self.store.flatten(),
        })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        let mut m = Self::assemble(&c.spec, c.dim)?;
        m.store.load_flat(&c.params)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()?)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&c)
    }
}

/// Sums `(value, grads)` pairs in order.
pub(crate) fn sum_parts(parts: Vec<(f64, Vec<Tensor>)>) -> (f64, Vec<Tensor>) {
    let mut it = parts.into_iter();
    let (mut v, mut g) = it.next().expect("at least one chunk");
    for (pv, pg) in it {
        v += pv;
        for (a, b) in g.iter_mut().zip(pg) {
            *a += &b;
        }
    }
    (v, g)
}

/// On-disk model: architecture plus every stored value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ArchitectureSpec,
    pub dim: usize,
    pub params: Vec<f64>,
}
