//! End-to-end use of the public API: generate data, fit, checkpoint, reload.

use emflow_core::data::{cache, test_seed, BrownianParams, DatasetSpec, ProblemSpec, System};
use emflow_core::flows::{ArchName, ArchitectureSpec, FlowModel, StructureSpec};
use emflow_core::training::{mle_train, vi_fit, TrainConfig};
use emflow_core::Execution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn short(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, eval_every: 50, ..TrainConfig::default() }
}

#[test]
fn density_fit_improves_and_survives_a_checkpoint() {
    let spec = DatasetSpec::Brownian(BrownianParams::default());
    let train = spec.generate(2000, 0).unwrap();
    let test = spec.generate(500, test_seed(0)).unwrap();
    let arch = ArchitectureSpec::new(ArchName::GemfT)
        .with_structure(StructureSpec::Continuity { channels: 1, sigma_init: 1.0 })
        .with_hidden(vec![16]);
    let mut model = FlowModel::assemble(&arch, spec.dim()).unwrap();
    let before = model.nll(&test.samples, Execution::default()).unwrap();

    let run = mle_train(&mut model, &train.samples, &test.samples, &short(300), Execution::default()).unwrap();
    assert_eq!(run.metric_name, "nll");
    assert!(run.final_metric < before, "{} !< {before}", run.final_metric);
    assert!(!run.trace.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = FlowModel::load(&path).unwrap();
    let a = model.log_prob(&test.samples, Execution::Sequential).unwrap();
    let b = back.log_prob(&test.samples, Execution::Sequential).unwrap();
    assert_eq!(a, b);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = back.sample(&mut rng, 64, Execution::default()).unwrap();
    assert_eq!(draws.dim(), (64, spec.dim()));
    assert!(draws.iter().all(|v| v.is_finite()));
}

#[test]
fn cached_data_matches_fresh_generation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::EightGaussians;
    let first = cache::load_or_generate(dir.path(), &spec, 300, 4).unwrap();
    let again = cache::load_or_generate(dir.path(), &spec, 300, 4).unwrap();
    assert_eq!(first.samples, again.samples);
    assert_eq!(first.samples, spec.generate(300, 4).unwrap().samples);
}

#[test]
fn vi_fit_is_the_same_in_both_execution_modes() {
    let problem = ProblemSpec::TimeSeries { system: System::Brownian, classification: true, bridge: false }
        .build(1)
        .unwrap();
    let arch = ArchitectureSpec::new(ArchName::MfGemfT);
    let cfg = TrainConfig { mc_samples: 16, eval_mc_samples: 200, lr: 1e-2, ..short(100) };
    let (_, seq) = vi_fit(&arch, &problem, &cfg, Execution::Sequential).unwrap();
    let (_, par) = vi_fit(&arch, &problem, &cfg, Execution::default()).unwrap();
    assert_eq!(seq.metric_name, "neg_elbo");
    assert!(seq.final_metric.is_finite());
    assert_eq!(seq.final_metric.to_bits(), par.final_metric.to_bits());
    assert!(seq.extra.contains_key("neg_elbo_sem"));
}
