//! Self-verification suite: exact property checks plus reduced-scale
//! reproductions of the headline comparisons. Each check returns a verdict
//! with a one-line detail; none of them panic on failure.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::bijectors::diagnostics::numeric_log_det;
use crate::bijectors::{
    forward_values, inverse_values, Activation, Affine, Bijector, Chain, GatedAffine, Invert, LowerTriangular,
    MadeConditioner, MaskedAutoregressive, MixtureCdf, MixtureParams, ParamId, ParamStore, Permutation,
};
use crate::bijectors::mixture::mixture_cdf_forward;
use crate::data::{self, BrownianParams, ConjugateGaussian, DatasetSpec, OuParams, System, VIProblem};
use crate::error::Result;
use crate::exec::Execution;
use crate::flows::{ArchName, ArchitectureSpec, FlowModel, Orientation, StructureSpec};
use crate::numerics::special::softplus_inverse;
use crate::numerics::{finite_difference_check, Solver, Tape, Tensor, Var};
use crate::probprog::{self, link, Distribution, NodeSpec, ProgramGraph};
use crate::structured::{self, GateConfig, StructuredLayer};
use crate::training::{self, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    /// Raw metrics behind the verdict, for repeat-run comparison.
    pub metrics: Vec<f64>,
}

/// One entry of the suite.
pub struct Check {
    pub id: u32,
    pub title: &'static str,
    /// Long-running trend reproductions.
    pub slow: bool,
    /// Wall-clock limit in seconds; slower runs fail.
    pub budget: f64,
    run: fn(Execution) -> Result<Verdict>,
}

struct Verdict {
    passed: bool,
    detail: String,
    metrics: Vec<f64>,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { passed, detail: detail.into(), metrics: Vec::new() })
}

fn verdict_with(passed: bool, detail: impl Into<String>, metrics: Vec<f64>) -> Result<Verdict> {
    Ok(Verdict { passed, detail: detail.into(), metrics })
}

impl Check {
    pub fn run(&self, exec: Execution) -> Outcome {
        let t = Instant::now();
        let (passed, detail, metrics) = match (self.run)(exec) {
            Ok(v) => (v.passed, v.detail, v.metrics),
            Err(e) => (false, format!("error: {e}"), Vec::new()),
        };
        let seconds = t.elapsed().as_secs_f64();
        if seconds > self.budget {
            let detail = format!("{detail}; took {seconds:.1} s, budget {:.0} s", self.budget);
            return Outcome { passed: false, detail, seconds, metrics };
        }
        Outcome { passed, detail, seconds, metrics }
    }
}

pub fn suite() -> Vec<Check> {
    vec![
        Check { id: 1, title: "structured layer reproduces program densities", slow: false, budget: 10.0, run: rosenblatt_exactness },
        Check { id: 2, title: "round trip and log-det of every layer", slow: false, budget: 60.0, run: round_trip_and_log_det },
        Check { id: 3, title: "gating limits", slow: false, budget: 5.0, run: gating_limits },
        Check { id: 4, title: "gradient integrity", slow: false, budget: 30.0, run: gradient_integrity },
        Check { id: 5, title: "SDE moment oracles", slow: false, budget: 30.0, run: moment_oracles },
        Check { id: 6, title: "continuity scale recovery", slow: false, budget: 120.0, run: continuity_recovery },
        Check { id: 7, title: "EMF-T beats MAF on eight Gaussians", slow: true, budget: 1200.0, run: eight_gaussians_trend },
        Check { id: 8, title: "GEMF-T(c) beats MAF on Brownian motion", slow: true, budget: 1200.0, run: brownian_trend },
        Check { id: 9, title: "VI ordering GEMF-T <= IAF <= MF on BRS-c", slow: true, budget: 1200.0, run: vi_trend },
        Check { id: 10, title: "conjugate mean-field VI is exact", slow: false, budget: 60.0, run: conjugate_vi },
        Check { id: 11, title: "root finders agree on mixture CDF inversion", slow: false, budget: 30.0, run: root_finders },
    ]
}

fn normals(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

fn custom_graph() -> ProgramGraph {
    let mut g = ProgramGraph::new("custom");
    g.push(NodeSpec::new("a", vec![], Distribution::normal(link("0.5"), link("1.5"))));
    g.push(NodeSpec::new("b", vec![0], Distribution::normal(link("tanh(p0)"), link("0.3 + softplus(p0)"))));
    g.push(NodeSpec::new("c", vec![0, 1], Distribution::normal(link("p0 * p1 - 1"), link("exp(0.2 * p1)"))));
    g
}

fn rosenblatt_exactness(exec: Execution) -> Result<Verdict> {
    let graphs = [
        structured::continuity(5, 0.7)?,
        structured::continuity(10, 0.2)?,
        structured::smoothness(5, 0.4)?,
        structured::hierarchical(2, 4, 1.5, 0.5)?,
        custom_graph(),
    ];
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for g in graphs {
        let d = g.total_dim();
        let sample = probprog::ancestral_sample(&g, &mut rng, 100)?;
        let mut store = ParamStore::new();
        let layer = StructuredLayer::new(&mut store, "s", g.clone(), None)?;
        let model = FlowModel::from_layers(d, vec![Box::new(layer)], store, Orientation::Density)?;
        let flow = model.log_prob(&sample, exec)?;
        let program = probprog::joint_log_prob_batch(&g, &sample)?;
        for (a, b) in flow.iter().zip(&program) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst < 1e-8, format!("max |flow - program| = {worst:.2e} over 5 graphs x 100 samples"))
}

fn randomise(store: &mut ParamStore, ids: &[ParamId], rng: &mut ChaCha8Rng, scale: f64) {
    for &id in ids {
        store.get_mut(id).mapv_inplace(|_| rng.random_range(-scale..scale));
    }
}

/// Every layer type with randomised parameters. The flag marks layers
/// whose forward direction is computed by root finding.
fn layer_zoo(dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, ParamStore, Box<dyn Bijector>, bool)>> {
    let mut out: Vec<(&'static str, ParamStore, Box<dyn Bijector>, bool)> = Vec::new();

    let mut s = ParamStore::new();
    let l = Affine::identity(&mut s, "a", dim);
    randomise(&mut s, &l.param_ids(), rng, 1.0);
    out.push(("affine", s, Box::new(l), false));

    let mut s = ParamStore::new();
    let l = GatedAffine::new(&mut s, "g", vec![0.0; dim], vec![1.0; dim], 0.5, 100.0);
    randomise(&mut s, &l.param_ids()[..2], rng, 1.0);
    randomise(&mut s, &[l.gate_id()], rng, 0.02);
    out.push(("gated_affine", s, Box::new(l), false));

    let mut s = ParamStore::new();
    let l = LowerTriangular::identity(&mut s, "t", dim);
    randomise(&mut s, &l.param_ids(), rng, 0.8);
    out.push(("lower_triangular", s, Box::new(l), false));

    out.push(("permutation", ParamStore::new(), Box::new(Permutation::random(dim, rng.random())), false));

    let made = |s: &mut ParamStore, rng: &mut ChaCha8Rng| {
        let m = MadeConditioner::new(s, "m", dim, &[8, 8], Activation::Tanh, rng);
        let ids = [m.output_weight(), m.output_bias()];
        randomise(s, &ids, rng, 0.4);
        MaskedAutoregressive::new(m)
    };
    let mut s = ParamStore::new();
    let l = made(&mut s, rng);
    out.push(("maf", s, Box::new(l), false));

    let mut s = ParamStore::new();
    let l = made(&mut s, rng);
    out.push(("iaf", s, Box::new(Invert(Box::new(l))), false));

    let mut s = ParamStore::new();
    let a = Affine::identity(&mut s, "a", dim);
    randomise(&mut s, &a.param_ids(), rng, 1.0);
    let m = made(&mut s, rng);
    let chain = Chain::new(vec![Box::new(a), Box::new(Permutation::reverse(dim)), Box::new(m)])?;
    out.push(("chain", s, Box::new(chain), false));

    let mut s = ParamStore::new();
    let l = MixtureCdf::new(&mut s, "mix", dim, 3, -2.0, 2.0, 1.0);
    let (w, m, sd) = l.ids();
    randomise(&mut s, &[w, m], rng, 1.5);
    s.get_mut(sd).mapv_inplace(|_| softplus_inverse(rng.random_range(0.3..1.5)));
    out.push(("mixture_cdf", s, Box::new(l), true));

    for gated in [false, true] {
        let mut s = ParamStore::new();
        let gate = gated.then(GateConfig::balanced);
        let l = StructuredLayer::new(&mut s, "s", structured::smoothness(dim.max(2), rng.random_range(0.2..2.0))?, gate)?;
        if let Some(g) = l.gate_id() {
            randomise(&mut s, &[g], rng, 0.02);
        }
        if dim >= 2 {
            out.push((if gated { "gated_structured" } else { "structured" }, s, Box::new(l), false));
        }
    }
    Ok(out)
}

fn round_trip_and_log_det(_: Execution) -> Result<Verdict> {
    let mut worst_rt = ("", 0.0f64);
    let mut worst_ld = ("", 0.0f64);
    let mut failures = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 1 + (seed as usize % 5);
        for (name, store, layer, numeric) in layer_zoo(dim, &mut rng)? {
            let x = Array2::from_shape_fn((8, dim), |_| rng.random_range(-2.0..2.0));
            let (y, fldj) = forward_values(layer.as_ref(), &store, &x)?;
            let (back, ildj) = inverse_values(layer.as_ref(), &store, &y)?;
            let tol = if numeric { 1e-6 } else { 1e-9 };
            let rt = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let anti = fldj.iter().zip(&ildj).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            if rt > tol || anti > tol * 10.0 {
                failures += 1;
            }
            if rt > worst_rt.1 {
                worst_rt = (name, rt);
            }
            let row: Vec<f64> = x.row(0).to_vec();
            let num = numeric_log_det(layer.as_ref(), &store, &row, 1e-5)?;
            let rel = (fldj[0] - num).abs() / num.abs().max(1.0);
            if rel >= 1e-3 {
                failures += 1;
            }
            if rel > worst_ld.1 {
                worst_ld = (name, rel);
            }
        }
    }
    verdict(
        failures == 0,
        format!(
            "{failures} failures; worst round trip {:.1e} ({}), worst log-det rel. error {:.1e} ({})",
            worst_rt.1, worst_rt.0, worst_ld.1, worst_ld.0
        ),
    )
}

fn gating_limits(_: Execution) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut notes = Vec::new();
    for g in [structured::continuity(6, 0.3)?, structured::smoothness(5, 0.6)?, custom_graph()] {
        let d = g.total_dim();
        let mut s0 = ParamStore::new();
        let plain = StructuredLayer::new(&mut s0, "s", g.clone(), None)?;
        let mut s1 = ParamStore::new();
        let gated = StructuredLayer::new(&mut s1, "s", g.clone(), Some(GateConfig::near_program()))?;
        let graph = g;
        let gid = gated.gate_id().expect("gated");
        let x = normals(&mut rng, 64, d);

        // raw gates of ±10 saturate the scaled sigmoid to exactly 0 and 1
        s1.get_mut(gid).fill(10.0);
        for fwd in [true, false] {
            let run = |l: &StructuredLayer, s: &ParamStore| if fwd { forward_values(l, s, &x) } else { inverse_values(l, s, &x) };
            let (a, la) = run(&plain, &s0)?;
            let (b, lb) = run(&gated, &s1)?;
            let same = a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits())
                && la.iter().zip(&lb).all(|(p, q)| p.to_bits() == q.to_bits());
            ok &= same;
        }
        s1.get_mut(gid).fill(-10.0);
        for fwd in [true, false] {
            let (y, l) = if fwd { forward_values(&gated, &s1, &x)? } else { inverse_values(&gated, &s1, &x)? };
            ok &= y == x && l.iter().all(|&v| v == 0.0);
        }

        // interior gates get gradient, except on standard-normal roots where
        // the node map is the identity for every gate value
        let (plain_y, _) = forward_values(&plain, &s0, &x)?;
        let offsets = graph.offsets();
        let moving: Vec<bool> = graph
            .nodes
            .iter()
            .zip(&offsets)
            .map(|(n, &o)| (o..o + n.dim).any(|j| plain_y.column(j) != x.column(j)))
            .collect();
        s1.get_mut(gid).fill(0.0);
        let tape = Tape::new();
        let p = s1.bind(&tape);
        let (y, ld) = gated.forward(&tape.constant(x.clone()), &p)?;
        let loss = y.square().sum().add(&ld.sum());
        let grad = crate::numerics::compute_gradients(&loss, &[p.get(gid).clone()])?;
        let grad: Vec<f64> = grad[0].iter().copied().collect();
        ok &= grad.len() == moving.len();
        let expected = moving.iter().filter(|m| **m).count();
        let nonzero = grad.iter().zip(&moving).filter(|(g, m)| **m && **g != 0.0).count();
        let idle_zero = grad.iter().zip(&moving).all(|(g, m)| *m || *g == 0.0);
        ok &= nonzero == expected && idle_zero;
        notes.push(format!("{nonzero}/{expected} gate grads non-zero"));
    }
    verdict(ok, format!("lambda=1 bitwise, lambda=0 identity; {}", notes.join(", ")))
}

/// Value of `f` with the store's trainable tensors replaced by `vars`.
fn with_vars<'a>(
    model: &'a FlowModel,
    f: impl Fn(&FlowModel, &Tape, &crate::bijectors::ParamVars) -> Result<Var> + 'a,
) -> impl Fn(&Tape, &[Var]) -> Result<Var> + 'a {
    let ids = model.store().trainable_ids();
    move |tape, vars| {
        let mut p = model.store().bind(tape);
        for (id, v) in ids.iter().zip(vars) {
            p.replace(*id, v.clone());
        }
        f(model, tape, &p)
    }
}

fn perturb(model: &mut FlowModel, rng: &mut ChaCha8Rng, scale: f64) -> Vec<Tensor> {
    for id in model.store().trainable_ids() {
        model.store_mut().get_mut(id).mapv_inplace(|v| v + rng.random_range(-scale..scale));
    }
    model.store().trainable_ids().iter().map(|&i| model.store().get(i).clone()).collect()
}

fn gradient_integrity(_: Execution) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    // flow NLL of an EMF-T density model
    let arch = ArchitectureSpec::new(ArchName::EmfT)
        .with_structure(StructureSpec::Mixture { components: 4, lo: -2.0, hi: 2.0, std: 1.0 })
        .with_hidden(vec![8]);
    let mut model = FlowModel::assemble(&arch, 2)?;
    let params = perturb(&mut model, &mut rng, 0.1);
    let y = normals(&mut rng, 20, 2);
    let nll = finite_difference_check(
        with_vars(&model, |m, tape, p| Ok(m.log_prob_var(&tape.constant(y.clone()), p)?.mean().neg())),
        &params,
        1e-6,
    )?;

    // 50-draw ELBO of a 5-dim GEMF-T posterior
    let mut g = ProgramGraph::new("chain");
    g.push(NodeSpec::new("a", vec![], Distribution::normal(link("0"), link("1"))));
    for i in 1..5 {
        g.push(NodeSpec::new(format!("x{i}"), vec![i - 1], Distribution::normal(link("tanh(p0)"), link("0.5"))));
    }
    let mut joint = g.clone();
    joint.push(NodeSpec::new("y", vec![4], Distribution::normal(link("p0"), link("0.3"))));
    let prob = VIProblem::new("chain".into(), g, joint, vec![0.7], None)?;
    let mut post = training::vi_model(&ArchitectureSpec::new(ArchName::GemfT).with_hidden(vec![8]), &prob)?;
    let params = perturb(&mut post, &mut rng, 0.1);
    let eps = normals(&mut rng, 50, 5);
    let elbo = finite_difference_check(
        with_vars(&post, |m, tape, p| {
            let (z, log_q) = m.sample_var(&tape.constant(eps.clone()), p)?;
            Ok(prob.log_joint_var(tape, &z)?.sub(&log_q).mean())
        }),
        &params,
        1e-6,
    )?;
    verdict(
        nll.max_rel_error < 1e-4 && elbo.max_rel_error < 1e-4,
        format!(
            "NLL rel. error {:.1e} over {} entries, ELBO rel. error {:.1e} over {} entries",
            nll.max_rel_error, nll.entries, elbo.max_rel_error, elbo.entries
        ),
    )
}

fn sample_var(c: ndarray::ArrayView1<f64>) -> f64 {
    let m = c.mean().unwrap_or(0.0);
    c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64
}

fn moment_oracles(_: Execution) -> Result<Verdict> {
    const N: usize = 100_000;
    // standard error of a Gaussian sample variance
    let se = |v: f64| v * (2.0 / (N - 1) as f64).sqrt();
    let bp = BrownianParams::default();
    let br = DatasetSpec::Brownian(bp).generate(N, 21)?.samples;
    let want_br = bp.t as f64 * bp.sigma * bp.sigma;
    let got_br = sample_var(br.column(bp.t - 1));
    let z_br = (got_br - want_br) / se(want_br);

    let op = OuParams::default();
    let ou = DatasetSpec::Ou(op).generate(N, 22)?.samples;
    let th2 = op.theta * op.theta;
    let stationary = op.sigma * op.sigma / (1.0 - th2);
    // the last step still carries θ^(2(T−1)) of the initial variance
    let k = th2.powi(op.t as i32 - 1);
    let want_ou = k * op.sigma0 * op.sigma0 + (1.0 - k) * stationary;
    let got_ou = sample_var(ou.column(op.t - 1));
    let z_ou = (got_ou - want_ou) / se(want_ou);
    verdict(
        z_br.abs() < 4.0 && z_ou.abs() < 4.0,
        format!(
            "Brownian Var(x_T) {got_br:.5} vs {want_br:.5} ({z_br:+.2} SE); OU Var {got_ou:.5} vs stationary {stationary:.5} ({z_ou:+.2} SE)"
        ),
    )
}

/// Criterion 6 metric: the fitted continuity scale.
pub fn continuity_sigma(exec: Execution) -> Result<f64> {
    let spec = DatasetSpec::Brownian(BrownianParams::default());
    let train = spec.generate(10_000, 6)?.samples;
    let test = spec.generate(2_000, data::test_seed(6))?.samples;
    let mut store = ParamStore::new();
    let layer = StructuredLayer::new(&mut store, "structured", structured::continuity(30, 1.0)?, None)?;
    let sid = layer.param_id(structured::SIGMA_S).expect("continuity scale");
    let mut model = FlowModel::from_layers(30, vec![Box::new(layer)], store, Orientation::Density)?;
    let cfg = TrainConfig { iterations: 1_000, lr: 0.05, batch_size: 256, seed: 6, ..Default::default() };
    training::mle_train(&mut model, &train, &test, &cfg, exec).map_err(|f| f.error)?;
    Ok(crate::numerics::special::softplus(model.store().get(sid)[[0, 0]]))
}

fn continuity_recovery(exec: Execution) -> Result<Verdict> {
    let s = continuity_sigma(exec)?;
    verdict_with((s - 0.1).abs() <= 0.01, format!("sigma_s = {s:.6} (target 0.1 +/- 0.01)"), vec![s])
}

/// Desk-scale settings of the three trend reproductions.
pub mod desk {
    use super::*;

    pub const EIGHT_GAUSSIANS_SIZE: usize = 100_000;
    pub const EIGHT_GAUSSIANS_ITERS: usize = 20_000;
    pub const BROWNIAN_SIZE: usize = 100_000;
    pub const BROWNIAN_ITERS: usize = 5_000;
    pub const VI_ITERS: usize = 10_000;
    pub const SEEDS: [u64; 3] = [0, 1, 2];

    pub fn mle_config(iterations: usize, seed: u64) -> TrainConfig {
        TrainConfig { iterations, lr: 1e-3, batch_size: 128, seed, ..Default::default() }
    }

    pub fn vi_config(arch: ArchName, seed: u64) -> TrainConfig {
        let lr = match arch {
            ArchName::Mf | ArchName::Mvn => 1e-2,
            _ => 1e-3,
        };
        TrainConfig { iterations: VI_ITERS, lr, mc_samples: 50, seed, ..Default::default() }
    }

    pub fn mle_run(dataset: &DatasetSpec, arch: &ArchitectureSpec, n: usize, iterations: usize, seed: u64, exec: Execution) -> Result<f64> {
        let train = dataset.generate(n, seed)?.samples;
        let test = dataset.generate(n, data::test_seed(seed))?.samples;
        let mut model = FlowModel::assemble(&arch.clone().with_seed(seed), dataset.dim())?;
        let r = training::mle_train(&mut model, &train, &test, &mle_config(iterations, seed), exec).map_err(|f| f.error)?;
        Ok(r.final_metric)
    }

    /// Test NLL of MAF and EMF-T on eight Gaussians (seed 0).
    pub fn eight_gaussians(exec: Execution) -> Result<(f64, f64)> {
        let d = DatasetSpec::EightGaussians;
        let maf = mle_run(&d, &ArchitectureSpec::new(ArchName::Maf), EIGHT_GAUSSIANS_SIZE, EIGHT_GAUSSIANS_ITERS, 0, exec)?;
        let emf = ArchitectureSpec::new(ArchName::EmfT).with_structure(StructureSpec::mixture_top());
        let emf = mle_run(&d, &emf, EIGHT_GAUSSIANS_SIZE, EIGHT_GAUSSIANS_ITERS, 0, exec)?;
        Ok((maf, emf))
    }

    pub fn brownian_dataset() -> DatasetSpec {
        DatasetSpec::Brownian(BrownianParams { geometric: true, ..Default::default() })
    }

    /// Per-seed test NLL of MAF and GEMF-T(c) on geometric Brownian motion.
    pub fn brownian(exec: Execution) -> Result<Vec<(f64, f64)>> {
        let d = brownian_dataset();
        let gemf = ArchitectureSpec::new(ArchName::GemfT).with_structure(StructureSpec::Continuity { channels: 1, sigma_init: 1.0 });
        SEEDS
            .iter()
            .map(|&s| {
                let maf = mle_run(&d, &ArchitectureSpec::new(ArchName::Maf), BROWNIAN_SIZE, BROWNIAN_ITERS, s, exec)?;
                let g = mle_run(&d, &gemf, BROWNIAN_SIZE, BROWNIAN_ITERS, s, exec)?;
                Ok((maf, g))
            })
            .collect()
    }

    /// Per-seed final −ELBO of GEMF-T, IAF and MF on BRS-c.
    pub fn vi(exec: Execution) -> Result<Vec<[f64; 3]>> {
        SEEDS
            .iter()
            .map(|&s| {
                let prob = data::vi::time_series(System::Brownian, true, false, s)?;
                let mut out = [0.0; 3];
                for (k, a) in [ArchName::GemfT, ArchName::Iaf, ArchName::Mf].into_iter().enumerate() {
                    let spec = ArchitectureSpec::new(a).with_seed(s);
                    let (_, r) = training::vi_fit(&spec, &prob, &vi_config(a, s), exec).map_err(|f| f.error)?;
                    out[k] = r.final_metric;
                }
                Ok(out)
            })
            .collect()
    }
}

fn eight_gaussians_trend(exec: Execution) -> Result<Verdict> {
    let (maf, emf) = desk::eight_gaussians(exec)?;
    verdict_with(emf <= maf - 0.1, format!("test NLL MAF {maf:.4}, EMF-T {emf:.4} (gap {:.4})", maf - emf), vec![maf, emf])
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn brownian_trend(exec: Execution) -> Result<Verdict> {
    let runs = desk::brownian(exec)?;
    let maf = mean(runs.iter().map(|r| r.0));
    let gemf = mean(runs.iter().map(|r| r.1));
    let metrics = runs.iter().flat_map(|r| [r.0, r.1]).collect();
    verdict_with(gemf < maf, format!("mean test NLL over 3 seeds: MAF {maf:.4}, GEMF-T(c) {gemf:.4}"), metrics)
}

fn vi_trend(exec: Execution) -> Result<Verdict> {
    let runs = desk::vi(exec)?;
    let g = mean(runs.iter().map(|r| r[0]));
    let i = mean(runs.iter().map(|r| r[1]));
    let m = mean(runs.iter().map(|r| r[2]));
    let metrics = runs.iter().flat_map(|r| r.iter().copied()).collect();
    verdict_with(g <= i && i <= m && g <= m - 2.0, format!("mean -ELBO over 3 seeds: GEMF-T {g:.4}, IAF {i:.4}, MF {m:.4}"), metrics)
}

fn conjugate_vi(exec: Execution) -> Result<Verdict> {
    let c = ConjugateGaussian::default();
    let prob = c.problem()?;
    let cfg = TrainConfig { iterations: 3_000, lr: 0.02, eval_mc_samples: 10_000, seed: 10, ..Default::default() };
    let (model, r) = training::vi_fit(&ArchitectureSpec::new(ArchName::Mf), &prob, &cfg, exec).map_err(|f| f.error)?;
    let st = model.store();
    let loc = st.find("mf.loc").map(|i| st.get(i)[[0, 0]]).unwrap_or(f64::NAN);
    let sd = st.find("mf.scale_raw").map(|i| crate::numerics::special::softplus(st.get(i)[[0, 0]])).unwrap_or(f64::NAN);
    let (pm, ps) = c.posterior();
    let elbo = -r.final_metric;
    let ev = c.log_evidence();
    verdict(
        (loc - pm).abs() < 1e-2 && (sd - ps).abs() < 1e-2 && (elbo - ev).abs() < 5e-3,
        format!("q = N({loc:.5}, {sd:.5}^2) vs N({pm:.5}, {ps:.5}^2); ELBO {elbo:.6} vs log p(x) {ev:.6}"),
    )
}

fn root_finders(_: Execution) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut fewer = 0;
    let cases = 1_000;
    for _ in 0..cases {
        let k = rng.random_range(1..=8);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let means: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let stds: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
        let p = MixtureParams::from_logits(&logits, means, stds)?;
        let x: f64 = rng.random_range(-3.0..3.0);
        let b = mixture_cdf_forward(x, &p, Solver::Bisection, 1e-12)?;
        let s = mixture_cdf_forward(x, &p, Solver::Secant, 1e-12)?;
        let c = mixture_cdf_forward(x, &p, Solver::Chandrupatla, 1e-12)?;
        worst = worst.max((b.x - c.x).abs()).max((b.x - s.x).abs()).max((s.x - c.x).abs());
        fewer += (c.evaluations < b.evaluations) as usize;
    }
    let share = fewer as f64 / cases as f64;
    verdict(
        worst < 1e-8 && share >= 0.9,
        format!("max disagreement {worst:.1e}; Chandrupatla cheaper than bisection in {:.1}% of cases", 100.0 * share),
    )
}

/// Serialised form used to compare repeated runs digit for digit.
pub fn serialise_metrics(m: &[f64]) -> String {
    serde_json::to_string(m).unwrap_or_default()
}
