use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_global_norm, Adam, RunResult, TrainConfig, TrainFailure, TraceRecorder};
use crate::error::Error;
use crate::exec::Execution;
use crate::flows::{FlowModel, Orientation};

/// Minimises the mean negative log-likelihood of `train` with Adam over
/// shuffled minibatches, then reports the NLL of `test`.
pub fn mle_train(
    model: &mut FlowModel,
    train: &Array2<f64>,
    test: &Array2<f64>,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<RunResult, TrainFailure> {
    cfg.validate()?;
    if model.orientation() != Orientation::Density {
        return Err(Error::Config("maximum likelihood needs a density-orientation model".into()).into());
    }
    if train.nrows() == 0 || test.nrows() == 0 {
        return Err(Error::Config("train and test sets must be non-empty".into()).into());
    }
    if train.ncols() != model.dim() || test.ncols() != model.dim() {
        return Err(Error::Shape(format!("data has {} columns, model dim is {}", train.ncols(), model.dim())).into());
    }
    let started = Instant::now();
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.nrows()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch_size.min(order.len());
    let mut adam = Adam::new(model.store());
    let mut rec = TraceRecorder::default();

    for it in 0..cfg.iterations {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = train.select(Axis(0), &order[cursor..cursor + batch]);
        cursor += batch;

        let lr = match schedule.lr(cfg.lr, it) {
            Ok(lr) => lr,
            Err(e) => return Err(rec.fail(e, it)),
        };
        let (loss, mut grads) = match model.nll_and_grad(&rows, exec, cfg.chunk) {
            Ok(v) => v,
            Err(e) => return Err(rec.fail(e, it)),
        };
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        if let Err(e) = adam.step(model.store_mut(), &grads, lr) {
            return Err(rec.fail(e, it));
        }
        rec.push(loss);
        rec.maybe_emit(it, cfg.eval_every, it + 1 == cfg.iterations, lr, started);
    }

    let test_nll = match model.nll(test, exec) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => return Err(rec.fail(Error::NonFinite { context: "held-out NLL".into() }, cfg.iterations)),
        Err(e) => return Err(rec.fail(e, cfg.iterations)),
    };
    let trace = rec.finish();
    let mut extra = BTreeMap::new();
    if let Some(last) = trace.last() {
        extra.insert("train_nll".into(), last.metric);
    }
    Ok(RunResult {
        metric_name: "nll".into(),
        final_metric: test_nll,
        trace,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        param_count: model.param_count(),
        seed: cfg.seed,
        extra,
    })
}
