use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use super::{clip_global_norm, Adam, RunResult, TrainConfig, TrainFailure, TraceRecorder};
use crate::bijectors::ParamVars;
use crate::data::VIProblem;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::flows::sum_parts;
use crate::flows::{ArchName, ArchitectureSpec, FlowModel, Orientation, StructureSpec};
use crate::numerics::{compute_gradients, Tape, Tensor, Var};

/// Surrogate posteriors supported by [`vi_fit`].
pub const VI_ARCHITECTURES: [ArchName; 9] = [
    ArchName::GemfT,
    ArchName::EmfT,
    ArchName::Iaf,
    ArchName::Mf,
    ArchName::Mvn,
    ArchName::MfGemfT,
    ArchName::MvnGemfT,
    ArchName::MfEmfT,
    ArchName::MvnEmfT,
];

const EVAL_SEED_MIX: u64 = 0xe1b0_0000_0000_0005;

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

fn first_non_finite_row(v: &Var) -> Option<usize> {
    v.value().rows().into_iter().position(|r| r.iter().any(|x| !x.is_finite()))
}

/// A variational-orientation model for `problem`. Structured
/// architectures embed the problem's prior unless `spec` brings its own
/// structure.
pub fn vi_model(spec: &ArchitectureSpec, problem: &VIProblem) -> Result<FlowModel> {
    if !VI_ARCHITECTURES.contains(&spec.name) {
        return Err(Error::Config(format!("'{}' is not a variational architecture", spec.name)));
    }
    let mut spec = spec.clone().variational();
    if spec.name.uses_structure() && spec.structure == StructureSpec::None {
        spec.structure = StructureSpec::Program { graph: problem.prior.clone() };
    }
    FlowModel::assemble(&spec, problem.latent_dim())
}

/// `(1/mc) Σ [log p(z_i) − log q(z_i)]` with `z_i` reparameterised draws
/// from `posterior`; differentiable in the posterior parameters.
pub fn elbo_estimate<R: Rng + ?Sized>(
    tape: &Tape,
    posterior: &FlowModel,
    p: &ParamVars,
    target: &dyn Fn(&Var) -> Result<Var>,
    mc: usize,
    rng: &mut R,
) -> Result<Var> {
    if mc == 0 {
        return Err(Error::Config("mc must be positive".into()));
    }
    let eps = tape.constant(standard_normal(rng, mc, posterior.dim()));
    let (z, log_q) = posterior.sample_var(&eps, p)?;
    let lp = target(&z)?;
    if let Some(i) = first_non_finite_row(&lp) {
        return Err(Error::NonFinite { context: format!("target log-density at sample {i}") });
    }
    Ok(lp.sub(&log_q).mean())
}

/// ELBO for fixed base draws `eps` and the gradient of `−ELBO` with respect
/// to every stored tensor. Chunks of `chunk` draws are differentiated
/// independently and summed in order.
pub fn elbo_and_grad(
    model: &FlowModel,
    problem: &VIProblem,
    eps: &Array2<f64>,
    exec: Execution,
    chunk: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let n = eps.nrows();
    if n == 0 {
        return Err(Error::Shape("no Monte Carlo draws".into()));
    }
    let ranges = exec::chunk_ranges(n, chunk);
    let scale = -1.0 / n as f64;
    let parts = exec::try_map_indexed(exec, ranges.len(), |c| {
        let tape = Tape::new();
        let p = model.store().bind(&tape);
        let e = tape.constant(eps.slice(s![ranges[c].clone(), ..]).to_owned());
        let (z, log_q) = model.sample_var(&e, &p)?;
        let lp = problem.log_joint_var(&tape, &z)?;
        if let Some(i) = first_non_finite_row(&lp) {
            let at = ranges[c].start + i;
            return Err(Error::NonFinite { context: format!("target log-density at sample {at}") });
        }
        let loss = lp.sub(&log_q).sum().mul_scalar(scale);
        let g = compute_gradients(&loss, p.all())?;
        Ok((loss.item(), g))
    })?;
    let (neg, g) = sum_parts(parts);
    Ok((-neg, g))
}

/// Per-draw `log p(z, x) − log q(z)` without gradients.
fn elbo_terms(model: &FlowModel, problem: &VIProblem, eps: &Array2<f64>, exec: Execution) -> Result<Vec<f64>> {
    let ranges = exec::chunk_ranges(eps.nrows(), crate::flows::EVAL_CHUNK);
    let parts = exec::try_map_indexed(exec, ranges.len(), |c| {
        let tape = Tape::no_grad();
        let p = model.store().bind(&tape);
        let e = tape.constant(eps.slice(s![ranges[c].clone(), ..]).to_owned());
        let (z, log_q) = model.sample_var(&e, &p)?;
        let w = problem.log_joint_var(&tape, &z)?.sub(&log_q);
        Ok::<_, Error>(w.value().column(0).to_vec())
    })?;
    Ok(parts.concat())
}

/// `log p(z*, x) − log q(z*)` at the generating latents `z*`. For the exact
/// posterior this is `log p(x)` whatever `z*` is.
pub fn forward_kl_surrogate(model: &FlowModel, problem: &VIProblem) -> Result<f64> {
    let z = problem
        .true_latents
        .as_ref()
        .ok_or_else(|| Error::Config(format!("problem '{}' has no generating latents", problem.name)))?;
    let row = Array2::from_shape_vec((1, z.len()), z.clone()).map_err(|e| Error::Shape(e.to_string()))?;
    let log_q = model.log_prob(&row, Execution::Sequential)?[0];
    Ok(problem.log_joint(z)? - log_q)
}

/// Fits a surrogate posterior by stochastic gradient ascent on the ELBO.
/// The final metric is `−ELBO` from `eval_mc_samples` fresh draws.
pub fn vi_fit(
    spec: &ArchitectureSpec,
    problem: &VIProblem,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(FlowModel, RunResult), TrainFailure> {
    cfg.validate()?;
    let mut model = vi_model(spec, problem)?;
    debug_assert_eq!(model.orientation(), Orientation::Variational);
    let started = Instant::now();
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store());
    let mut rec = TraceRecorder::default();
    let dim = model.dim();

    for it in 0..cfg.iterations {
        let eps = standard_normal(&mut rng, cfg.mc_samples, dim);
        let lr = match schedule.lr(cfg.lr, it) {
            Ok(lr) => lr,
            Err(e) => return Err(rec.fail(e, it)),
        };
        let (elbo, mut grads) = match elbo_and_grad(&model, problem, &eps, exec, cfg.chunk) {
            Ok(v) => v,
            Err(e) => return Err(rec.fail(e, it)),
        };
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        if let Err(e) = adam.step(model.store_mut(), &grads, lr) {
            return Err(rec.fail(e, it));
        }
        rec.push(-elbo);
        rec.maybe_emit(it, cfg.eval_every, it + 1 == cfg.iterations, lr, started);
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SEED_MIX);
    let eps = standard_normal(&mut eval_rng, cfg.eval_mc_samples, dim);
    let terms = match elbo_terms(&model, problem, &eps, exec) {
        Ok(t) => t,
        Err(e) => return Err(rec.fail(e, cfg.iterations)),
    };
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return Err(rec.fail(Error::NonFinite { context: "final ELBO".into() }, cfg.iterations));
    }
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut extra = BTreeMap::new();
    extra.insert("neg_elbo_sem".into(), (var / n).sqrt());
    if problem.true_latents.is_some() {
        match forward_kl_surrogate(&model, problem) {
            Ok(v) => {
                extra.insert("forward_kl_surrogate".into(), v);
            }
            Err(e) => return Err(rec.fail(e, cfg.iterations)),
        }
    }
    let result = RunResult {
        metric_name: "neg_elbo".into(),
        final_metric: -mean,
        trace: rec.finish(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        param_count: model.param_count(),
        seed: cfg.seed,
        extra,
    };
    Ok((model, result))
}
