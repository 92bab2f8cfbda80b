//! Flow models: named architectures over a standard-normal base.

mod arch;
mod model;

pub use arch::{ArchName, ArchitectureSpec, Orientation, PermutationSpec, StructureSpec};
pub use model::{base_log_prob, Checkpoint, FlowModel, EVAL_CHUNK};
pub(crate) use model::sum_parts;

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::bijectors::{Affine, Bijector, Invert, MadeConditioner, MaskedAutoregressive, ParamStore, Activation};
    use crate::error::Error;
    use crate::exec::Execution;
    use crate::numerics::special::{self, HALF_LN_2PI};
    use crate::probprog;
    use crate::structured;

    const SEQ: Execution = Execution::Sequential;

    fn small(name: ArchName, structure: StructureSpec) -> ArchitectureSpec {
        ArchitectureSpec::new(name).with_structure(structure).with_hidden(vec![16, 16]).with_seed(3)
    }

    /// Every density-orientation architecture on a dim-2 event space.
    fn all_2d() -> Vec<ArchitectureSpec> {
        let cont = StructureSpec::Continuity { channels: 1, sigma_init: 1.0 };
        let mix = StructureSpec::Mixture { components: 5, lo: -2.0, hi: 2.0, std: 1.0 };
        ArchName::ALL
            .into_iter()
            .map(|a| match a {
                ArchName::EmfT | ArchName::EmfM => small(a, mix.clone()),
                a if a.uses_structure() => small(a, cont.clone()),
                a => small(a, StructureSpec::None),
            })
            .collect()
    }

    /// Randomises every trainable tensor a little so the maps are not the
    /// identity.
    fn perturb(m: &mut FlowModel, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in m.store().trainable_ids() {
            m.store_mut().get_mut(id).mapv_inplace(|v| v + rng.random_range(-scale..scale));
        }
    }

    #[test]
    fn empty_and_affine_stacks() {
        let m = FlowModel::from_layers(1, vec![], ParamStore::new(), Orientation::Density).unwrap();
        let lp = m.log_prob(&ndarray::array![[0.0]], SEQ).unwrap();
        assert!((lp[0] + 0.918939).abs() < 1e-6);
        assert_eq!(lp[0], -HALF_LN_2PI);

        let mut store = ParamStore::new();
        let a = Affine::new(&mut store, "a", vec![0.0], vec![2.0], false);
        let m = FlowModel::from_layers(1, vec![Box::new(a)], store, Orientation::Density).unwrap();
        let lp = m.log_prob(&ndarray::array![[0.0]], SEQ).unwrap();
        assert!((lp[0] - (-(2f64.ln()) - HALF_LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn empty_stack_samples_are_standard_normal() {
        let m = FlowModel::from_layers(1, vec![], ParamStore::new(), Orientation::Density).unwrap();
        let n = 10_000;
        let mut x: Vec<f64> = m.sample(&mut ChaCha8Rng::seed_from_u64(2), n, SEQ).unwrap().into_iter().collect();
        x.sort_by(f64::total_cmp);
        let d = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = special::std_normal_cdf(v);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at α = 0.01
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn shifted_affine_sample_mean() {
        let mut store = ParamStore::new();
        let a = Affine::new(&mut store, "a", vec![5.0], vec![1.0], false);
        let m = FlowModel::from_layers(1, vec![Box::new(a)], store, Orientation::Density).unwrap();
        let x = m.sample(&mut ChaCha8Rng::seed_from_u64(9), 10_000, SEQ).unwrap();
        let mean = x.mean().unwrap();
        assert!((mean - 5.0).abs() < 4.0 / 100.0, "{mean}");
    }

    #[test]
    fn brownian_stack_matches_program_density() {
        let g = structured::continuity(5, 0.3).unwrap();
        let spec = ArchitectureSpec::new(ArchName::MfEmfT).with_structure(StructureSpec::Program { graph: g.clone() });
        // the diagonal affine starts as the identity, leaving the program
        let m = FlowModel::assemble(&spec, 5).unwrap();
        let y = probprog::ancestral_sample(&g, &mut ChaCha8Rng::seed_from_u64(4), 100).unwrap();
        let lp = m.log_prob(&y, SEQ).unwrap();
        let want = probprog::joint_log_prob_batch(&g, &y).unwrap();
        for (a, b) in lp.iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn assembly_layouts() {
        let m = FlowModel::assemble(&small(ArchName::Maf, StructureSpec::None), 2).unwrap();
        assert_eq!(m.layer_names(), ["maf", "permutation", "maf"]);
        let m = FlowModel::assemble(&small(ArchName::MafL, StructureSpec::None), 2).unwrap();
        assert_eq!(m.layer_names().iter().filter(|n| *n == "maf").count(), 3);

        let cont = StructureSpec::Continuity { channels: 1, sigma_init: 1.0 };
        let m = FlowModel::assemble(&small(ArchName::BMaf, cont.clone()), 4).unwrap();
        assert_eq!(m.layer_names(), ["structured(continuity-4)", "maf", "maf"]);

        let m = FlowModel::assemble(&small(ArchName::GemfT, cont.clone()), 4).unwrap();
        assert_eq!(m.layer_names().last().unwrap(), "gated_structured(continuity-4)");
        let m = FlowModel::assemble(&small(ArchName::EmfM, cont.clone()), 4).unwrap();
        assert_eq!(m.layer_names()[2], "structured(continuity-4)");

        let v = small(ArchName::GemfT, cont.clone()).variational();
        let m = FlowModel::assemble(&v, 4).unwrap();
        assert_eq!(m.layer_names(), ["invert(maf)", "permutation", "invert(maf)", "gated_structured(continuity-4)"]);

        let m = FlowModel::assemble(&small(ArchName::MvnGemfT, cont), 4).unwrap();
        assert_eq!(m.layers().len(), 2);

        assert!(matches!("nsf".parse::<ArchName>(), Err(Error::Config(_))));
        assert_eq!("GEMF-T".parse::<ArchName>().unwrap(), ArchName::GemfT);
        assert!(matches!(FlowModel::assemble(&small(ArchName::EmfT, StructureSpec::None), 2), Err(Error::Config(_))));
        let bad = small(ArchName::Maf, StructureSpec::Continuity { channels: 1, sigma_init: 1.0 });
        assert!(matches!(FlowModel::assemble(&bad, 2), Err(Error::Config(_))));
        let bad = small(ArchName::BMaf, StructureSpec::Continuity { channels: 3, sigma_init: 1.0 });
        assert!(matches!(FlowModel::assemble(&bad, 4), Err(Error::Config(_))));
    }

    #[test]
    fn mixture_parameter_count() {
        let maf = ArchitectureSpec::new(ArchName::Maf).with_hidden(vec![512, 512]);
        let emf = ArchitectureSpec::new(ArchName::EmfT).with_hidden(vec![512, 512]).with_structure(StructureSpec::mixture_top());
        let a = FlowModel::assemble(&maf, 2).unwrap().param_count();
        let b = FlowModel::assemble(&emf, 2).unwrap().param_count();
        assert_eq!(a, 2 * 266_244);
        assert_eq!(b - a, 2 * 3 * 100);
    }

    #[test]
    fn assembly_is_deterministic() {
        for spec in all_2d() {
            let a = FlowModel::assemble(&spec, 2).unwrap();
            let b = FlowModel::assemble(&spec, 2).unwrap();
            assert_eq!(a.store().flatten(), b.store().flatten());
        }
        let a = FlowModel::assemble(&small(ArchName::Maf, StructureSpec::None).with_seed(1), 2).unwrap();
        let b = FlowModel::assemble(&small(ArchName::Maf, StructureSpec::None).with_seed(2), 2).unwrap();
        assert_ne!(a.store().flatten(), b.store().flatten());
    }

    #[test]
    fn log_prob_of_samples_is_finite_for_every_architecture() {
        for spec in all_2d() {
            for orient in [Orientation::Density, Orientation::Variational] {
                let mut spec = spec.clone();
                spec.orientation = orient;
                let mut m = FlowModel::assemble(&spec, 2).unwrap();
                perturb(&mut m, 5, 0.1);
                let y = m.sample(&mut ChaCha8Rng::seed_from_u64(1), 1000, SEQ).unwrap();
                let lp = m.log_prob(&y, SEQ).unwrap();
                assert!(lp.iter().all(|v| v.is_finite()), "{}", spec.name);
            }
        }
    }

    fn grid_mass(m: &FlowModel, h: f64) -> f64 {
        let n = (30.0 / h) as usize;
        let pts = Array2::from_shape_fn((n * n, 2), |(r, c)| {
            let k = if c == 0 { r / n } else { r % n };
            -15.0 + (k as f64 + 0.5) * h
        });
        m.log_prob(&pts, Execution::Parallel).unwrap().iter().map(|v| v.exp()).sum::<f64>() * h * h
    }

    #[test]
    fn densities_integrate_to_one() {
        for spec in all_2d() {
            let mut m = FlowModel::assemble(&spec, 2).unwrap();
            let at_init = grid_mass(&m, 0.05);
            assert!((at_init - 1.0).abs() < 1e-3, "{} at init: {at_init}", spec.name);
            perturb(&mut m, 8, 0.2);
            let moved = grid_mass(&m, 0.05);
            assert!((moved - 1.0).abs() < 1e-3, "{} perturbed: {moved}", spec.name);
        }
    }

    #[test]
    fn inverse_autoregressive_sampler_is_the_masked_inverse_pass() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let made = MadeConditioner::new(&mut store, "m", 3, &[12, 12], Activation::Tanh, &mut rng);
        store.get_mut(made.output_weight()).mapv_inplace(|_| rng.random_range(-0.4..0.4));
        let maf = MaskedAutoregressive::new(made);
        let iaf = FlowModel::from_layers(3, vec![Box::new(Invert(Box::new(maf.clone())))], store.clone(), Orientation::Variational).unwrap();
        let eps = Array2::from_shape_fn((50, 3), |_| rng.random_range(-2.0..2.0));
        let z = iaf.push_forward(&eps, SEQ).unwrap();
        let (direct, _) = crate::bijectors::inverse_values(&maf, &store, &eps).unwrap();
        assert_eq!(z, direct);
        assert_eq!(maf.name(), "maf");
    }

    #[test]
    fn checkpoint_reload_is_bit_exact() {
        let spec = small(ArchName::EmfT, StructureSpec::Mixture { components: 4, lo: -1.0, hi: 1.0, std: 0.5 });
        let mut m = FlowModel::assemble(&spec, 2).unwrap();
        perturb(&mut m, 1, 0.3);
        m.store_mut().get_mut(crate::bijectors::ParamId(0))[[0, 0]] = 0.1 + 0.2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = FlowModel::load(&path).unwrap();
        let bits = |m: &FlowModel| m.store().flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
        let y = ndarray::array![[0.3, -0.2], [1.5, 2.0]];
        assert_eq!(m.log_prob(&y, SEQ).unwrap(), back.log_prob(&y, SEQ).unwrap());

        let hand = FlowModel::from_layers(1, vec![], ParamStore::new(), Orientation::Density).unwrap();
        assert!(hand.save(&path).is_err());
    }

    #[test]
    fn execution_modes_agree() {
        let spec = small(ArchName::GemfT, StructureSpec::Continuity { channels: 1, sigma_init: 0.5 });
        let mut m = FlowModel::assemble(&spec, 6).unwrap();
        perturb(&mut m, 2, 0.1);
        let y = m.sample(&mut ChaCha8Rng::seed_from_u64(3), 1500, SEQ).unwrap();
        assert_eq!(m.log_prob(&y, SEQ).unwrap(), m.log_prob(&y, Execution::Parallel).unwrap());
        let (a, ga) = m.nll_and_grad(&y, SEQ, 128).unwrap();
        let (b, gb) = m.nll_and_grad(&y, Execution::Parallel, 128).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        assert!((a - m.nll(&y, SEQ).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let spec = small(ArchName::GemfT, StructureSpec::Continuity { channels: 1, sigma_init: 0.5 }).with_hidden(vec![6]);
        let mut m = FlowModel::assemble(&spec, 3).unwrap();
        perturb(&mut m, 4, 0.2);
        let y = m.sample(&mut ChaCha8Rng::seed_from_u64(1), 8, SEQ).unwrap();
        let (_, grads) = m.nll_and_grad(&y, SEQ, 3).unwrap();
        let h = 1e-6;
        let base = m.store().flatten();
        let mut flat_grad = Vec::new();
        for g in &grads {
            flat_grad.extend(g.iter().copied());
        }
        let mut worst: f64 = 0.0;
        for i in (0..base.len()).step_by(3) {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            m.store_mut().load_flat(&plus).unwrap();
            let fp = m.nll(&y, SEQ).unwrap();
            m.store_mut().load_flat(&minus).unwrap();
            let fm = m.nll(&y, SEQ).unwrap();
            let num = (fp - fm) / (2.0 * h);
            worst = worst.max((num - flat_grad[i]).abs() / num.abs().max(flat_grad[i].abs()).max(1e-3));
        }
        m.store_mut().load_flat(&base).unwrap();
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn non_finite_reports_the_layer() {
        let mut store = ParamStore::new();
        let a = Affine::new(&mut store, "a", vec![0.0], vec![1e-300], false);
        let b = Affine::new(&mut store, "b", vec![0.0], vec![1e-300], false);
        let m = FlowModel::from_layers(1, vec![Box::new(a), Box::new(b)], store, Orientation::Density).unwrap();
        match m.log_prob(&ndarray::array![[1.0]], SEQ) {
            Err(Error::NonFinite { context }) => assert!(context.contains("layer 0"), "{context}"),
            other => panic!("{other:?}"),
        }
    }
}
