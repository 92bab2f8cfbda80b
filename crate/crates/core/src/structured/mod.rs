//! Structured layers: probabilistic programs compiled into invertible maps,
//! with optional per-node gates, and the named structure builders.

pub mod builders;
mod layer;

pub use builders::{
    continuity, continuity_channels, hierarchical, mixture, smoothness, smoothness_channels, SIGMA_S,
};
pub use layer::{GateConfig, StructuredLayer};

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution as _, StandardNormal};

    use super::*;
    use crate::bijectors::diagnostics::numeric_jacobian;
    use crate::bijectors::{forward_values, inverse_values, Bijector, ParamStore};
    use crate::error::Error;
    use crate::numerics::special::{self, HALF_LN_2PI};
    use crate::numerics::Tape;
    use crate::probprog::{self, link, Distribution, GraphParam, NodeSpec, ParamTransform, ProgramGraph};

    fn compile(g: ProgramGraph) -> (ParamStore, StructuredLayer) {
        let mut store = ParamStore::new();
        let layer = StructuredLayer::new(&mut store, "s", g, None).unwrap();
        (store, layer)
    }

    fn compile_gated(g: ProgramGraph, gate: GateConfig) -> (ParamStore, StructuredLayer) {
        let mut store = ParamStore::new();
        let layer = StructuredLayer::new(&mut store, "s", g, Some(gate)).unwrap();
        (store, layer)
    }

    fn normals(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    /// Forward/inverse with explicit gate values.
    fn run_with(layer: &StructuredLayer, store: &ParamStore, x: &Array2<f64>, lam: Option<&[f64]>, fwd: bool) -> (Array2<f64>, Array2<f64>) {
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let lam = lam.map(|l| tape.row(l));
        let v = tape.constant(x.clone());
        let (out, ld) = if fwd {
            layer.forward_with(&v, &p, lam.as_ref()).unwrap()
        } else {
            layer.inverse_with(&v, &p, lam.as_ref()).unwrap()
        };
        (out.value().clone(), ld.value().clone())
    }

    fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// A three-node graph with nonlinear links.
    fn custom_graph() -> ProgramGraph {
        let mut g = ProgramGraph::new("custom");
        g.add_param(GraphParam::trainable("s", vec![0.3], ParamTransform::Softplus));
        g.push(NodeSpec::new("a", vec![], Distribution::normal(link("0.5"), link("s"))));
        g.push(NodeSpec::new("b", vec![0], Distribution::normal(link("tanh(p0)"), link("softplus(p0) + 0.1"))));
        g.push(NodeSpec::new("c", vec![0, 1], Distribution::normal(link("p0 * p1 - 1"), link("exp(0.2 * p1)"))));
        g
    }

    #[test]
    fn brownian_forward_example() {
        let (store, layer) = compile(continuity(3, 0.1).unwrap());
        let (y, l) = forward_values(&layer, &store, &ndarray::array![[1.0, 1.0, 1.0]]).unwrap();
        for (got, want) in y.iter().zip([0.1, 0.2, 0.3]) {
            assert!((got - want).abs() < 1e-12, "{y:?}");
        }
        assert!((l[0] - 3.0 * 0.1f64.ln()).abs() < 1e-12);

        let (x, l) = inverse_values(&layer, &store, &ndarray::array![[0.1, 0.2, 0.3]]).unwrap();
        for v in x.iter() {
            assert!((v - 1.0).abs() < 1e-12, "{x:?}");
        }
        assert!((l[0] + 3.0 * 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn smoothness_examples() {
        let (store, layer) = compile(smoothness(4, 0.5).unwrap());
        let (y, _) = forward_values(&layer, &store, &ndarray::array![[0.0, 1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(y, ndarray::array![[0.0, 1.0, 2.0, 3.0]]);
        let (y, _) = forward_values(&layer, &store, &Array2::zeros((1, 4))).unwrap();
        assert_eq!(y, Array2::<f64>::zeros((1, 4)));

        let two = smoothness(2, 0.5).unwrap();
        assert!(two.nodes.iter().all(|n| n.parents.is_empty()));
    }

    #[test]
    fn builder_shapes_and_bounds() {
        assert_eq!(continuity(1, 1.0).unwrap().nodes.len(), 1);
        assert!(matches!(continuity(0, 1.0), Err(Error::Config(_))));
        assert!(matches!(smoothness(1, 1.0), Err(Error::Config(_))));
        assert!(matches!(hierarchical(0, 3, 1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(hierarchical(1, 1, 1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(mixture(2, 0, -4.0, 4.0, 1.0), Err(Error::Config(_))));

        let (store, _) = compile(continuity(7, 1.0).unwrap());
        assert_eq!(store.trainable_count(), 1);
        assert!((special::softplus(store.entries()[0].value[[0, 0]]) - 1.0).abs() < 1e-12);

        let h = hierarchical(1, 2, 1.0, 1.0).unwrap();
        assert_eq!(h.nodes.len(), 2);
        assert_eq!(h.nodes[1].parents, vec![0]);
        let h = hierarchical(3, 4, 1.0, 1.0).unwrap();
        assert_eq!(h.nodes.len(), 12);
        assert_eq!(h.nodes[5].parents, vec![4]);
    }

    #[test]
    fn hierarchical_leaf_follows_root() {
        let (store, layer) = compile(hierarchical(1, 2, 1.0, 1.0).unwrap());
        let (y, _) = forward_values(&layer, &store, &ndarray::array![[1.0, 0.0]]).unwrap();
        assert_eq!(y, ndarray::array![[1.0, 1.0]]);
    }

    #[test]
    fn mixture_grid_and_round_trip() {
        let g = mixture(2, 100, -4.0, 4.0, 1.0).unwrap();
        let means = &g.param("means1").unwrap().raw;
        assert_eq!(means.len(), 100);
        for w in means.windows(2) {
            assert!((w[1] - w[0] - 8.0 / 99.0).abs() < 1e-12);
        }
        assert_eq!(means[0], -4.0);
        assert!((means[99] - 4.0).abs() < 1e-12);

        let (store, layer) = compile(mixture(2, 5, -2.0, 2.0, 0.7).unwrap());
        let x = normals(200, 2, 4);
        let (y, fldj) = forward_values(&layer, &store, &x).unwrap();
        let (back, ildj) = inverse_values(&layer, &store, &y).unwrap();
        assert!(max_abs(&x, &back) < 1e-6);
        for (a, b) in fldj.iter().zip(&ildj) {
            assert!((a + b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_component_mixture_is_gaussian() {
        let (store, layer) = compile(mixture(1, 1, 2.0, 2.0, 0.5).unwrap());
        let (y, l) = forward_values(&layer, &store, &ndarray::array![[0.8], [-1.2]]).unwrap();
        assert!((y[[0, 0]] - 2.4).abs() < 1e-9);
        assert!((y[[1, 0]] - 1.4).abs() < 1e-9);
        assert!((l[0] - 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn round_trip_gaussian_structures() {
        let graphs = [
            continuity(6, 0.4).unwrap(),
            smoothness(5, 0.3).unwrap(),
            hierarchical(2, 3, 1.5, 0.5).unwrap(),
            custom_graph(),
        ];
        for g in graphs {
            let d = g.total_dim();
            for gated in [false, true] {
                let (store, layer) = if gated {
                    compile_gated(g.clone(), GateConfig::balanced())
                } else {
                    compile(g.clone())
                };
                let x = normals(1000, d, 9);
                let (y, fldj) = forward_values(&layer, &store, &x).unwrap();
                let (back, ildj) = inverse_values(&layer, &store, &y).unwrap();
                assert!(max_abs(&x, &back) < 1e-9, "{} gated={gated}", g.name);
                for (a, b) in fldj.iter().zip(&ildj) {
                    assert!((a + b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn unit_gates_match_ungated_layer() {
        for g in [continuity(4, 0.2).unwrap(), smoothness(4, 0.7).unwrap(), custom_graph()] {
            let d = g.total_dim();
            let n = g.nodes.len();
            let (s0, plain) = compile(g.clone());
            let (s1, gated) = compile_gated(g, GateConfig::near_program());
            let x = normals(50, d, 2);
            let ones = vec![1.0; n];
            for fwd in [true, false] {
                let (a, la) = run_with(&plain, &s0, &x, None, fwd);
                let (b, lb) = run_with(&gated, &s1, &x, Some(&ones), fwd);
                assert!(max_abs(&a, &b) <= 1e-12);
                assert!(max_abs(&la, &lb) <= 1e-12);
            }
        }
        // saturated raw gates give λ = 1 in floating point
        let (mut s, gated) = compile_gated(continuity(3, 0.1).unwrap(), GateConfig::near_program());
        s.get_mut(gated.gate_id().unwrap()).fill(1.0);
        let (y, _) = forward_values(&gated, &s, &ndarray::array![[1.0, 1.0, 1.0]]).unwrap();
        assert!((y[[0, 2]] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_gates_are_identity() {
        let g = custom_graph();
        let (s, layer) = compile_gated(g, GateConfig::balanced());
        let x = normals(20, 3, 6);
        let zeros = [0.0; 3];
        for fwd in [true, false] {
            let (y, l) = run_with(&layer, &s, &x, Some(&zeros), fwd);
            assert_eq!(y, x);
            assert!(l.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gate_initialisation() {
        let (s, layer) = compile_gated(continuity(3, 1.0).unwrap(), GateConfig::near_program());
        let tape = Tape::no_grad();
        let lam = layer.lambda(&s.bind(&tape)).unwrap();
        for &v in lam.value() {
            assert!((v - 0.999).abs() < 1e-12);
        }
        assert_eq!(s.get(layer.gate_id().unwrap()).len(), 3);
    }

    #[test]
    fn exactness_for_every_structure() {
        let graphs = [
            continuity(5, 0.3).unwrap(),
            continuity(10, 0.1).unwrap(),
            smoothness(5, 0.4).unwrap(),
            hierarchical(2, 4, 2.0, 0.5).unwrap(),
            hierarchical(1, 4, 1.0, 1.0).unwrap(),
            mixture(2, 3, -2.0, 2.0, 0.8).unwrap(),
            custom_graph(),
        ];
        for g in graphs {
            let (store, layer) = compile(g.clone());
            let samples = probprog::ancestral_sample(&g, &mut ChaCha8Rng::seed_from_u64(1), 100).unwrap();
            for row in samples.rows() {
                let (flow, program) = layer.exactness_log_prob(&store, row.as_slice().unwrap()).unwrap();
                assert!((flow - program).abs() < 1e-8, "{}: {flow} vs {program}", g.name);
            }
        }
    }

    #[test]
    fn exactness_single_node_closed_form() {
        let mut g = ProgramGraph::new("one");
        g.push(NodeSpec::new("x", vec![], Distribution::normal(link("1.5"), link("0.25"))));
        let (store, layer) = compile(g.clone());
        let (flow, program) = layer.exactness_log_prob(&store, &[1.5]).unwrap();
        let want = -(0.25f64).ln() - HALF_LN_2PI;
        assert!((flow - want).abs() < 1e-12 && (program - want).abs() < 1e-12);

        let (gs, gated) = compile_gated(g, GateConfig::near_program());
        assert!(matches!(gated.exactness_log_prob(&gs, &[1.5]), Err(Error::UnsupportedForGated(_))));
    }

    #[test]
    fn unsupported_nodes_are_rejected() {
        let mut store = ParamStore::new();
        let mix = StructuredLayer::new(&mut store, "m", mixture(1, 2, -1.0, 1.0, 1.0).unwrap(), Some(GateConfig::balanced()));
        assert!(matches!(mix, Err(Error::UnsupportedForGated(_))));

        let mut g = ProgramGraph::new("b");
        g.push(NodeSpec::new("x", vec![], Distribution::Bernoulli { logit: link("0") }));
        assert!(matches!(StructuredLayer::new(&mut store, "b", g, None), Err(Error::UnsupportedDistribution(_))));
    }

    #[test]
    fn non_finite_names_the_node() {
        let mut g = ProgramGraph::new("blowup");
        g.push(NodeSpec::new("root", vec![], Distribution::normal(link("0"), link("1"))));
        g.push(NodeSpec::new("leaf", vec![0], Distribution::normal(link("exp(exp(p0))"), link("1"))));
        let (store, layer) = compile(g);
        match forward_values(&layer, &store, &ndarray::array![[10.0, 0.0]]) {
            Err(Error::NonFinite { context }) => assert!(context.contains("leaf"), "{context}"),
            other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
        }
        assert!(matches!(forward_values(&layer, &store, &Array2::zeros((1, 3))), Err(Error::Shape(_))));
    }

    #[test]
    fn jacobian_is_block_triangular() {
        // x_out_j depends on x_in_i only when i = j or i is an ancestor of j
        let mut g = ProgramGraph::new("tree");
        g.push(NodeSpec::new("r", vec![], Distribution::normal(link("0"), link("1"))));
        g.push(NodeSpec::new("a", vec![0], Distribution::normal(link("p0"), link("softplus(p0)"))));
        g.push(NodeSpec::new("b", vec![0], Distribution::normal(link("2 * p0"), link("1"))));
        g.push(NodeSpec::new("c", vec![1], Distribution::normal(link("tanh(p0)"), link("0.5"))));
        g.push(NodeSpec::new("d", vec![], Distribution::normal(link("1"), link("2"))));
        let ancestors: [&[usize]; 5] = [&[], &[0], &[0], &[0, 1], &[]];
        for gated in [false, true] {
            let (store, layer) = if gated { compile_gated(g.clone(), GateConfig::balanced()) } else { compile(g.clone()) };
            let jac = numeric_jacobian(&layer, &store, &[0.3, -0.7, 1.1, 0.4, -0.2], 1e-6).unwrap();
            for j in 0..5 {
                for i in 0..5 {
                    let v = jac[[j, i]];
                    if i == j || ancestors[j].contains(&i) {
                        assert!(v.abs() > 1e-6, "∂{j}/∂{i} vanished");
                    } else {
                        assert_eq!(v, 0.0, "∂{j}/∂{i} = {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn gate_gradient_is_nonzero() {
        let (store, layer) = compile_gated(continuity(2, 0.3).unwrap(), GateConfig::balanced());
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(ndarray::array![[0.4, -1.2], [1.0, 0.5]]);
        let (y, fldj) = layer.forward(&x, &p).unwrap();
        let gate = p.get(layer.gate_id().unwrap()).clone();
        let g = tape.gradients(&fldj.sum(), &[gate.clone()]);
        assert!(g[0].iter().all(|v| v.abs() > 1e-3), "{:?}", g[0]);
        let g = tape.gradients(&y.sum(), &[gate]);
        assert!(g[0].iter().all(|v| v.abs() > 1e-3), "{:?}", g[0]);
    }

    #[test]
    fn structured_gradients_match_finite_differences() {
        let g = custom_graph();
        let (store, layer) = compile_gated(g, GateConfig::balanced());
        let x = normals(4, 3, 12);
        let params: Vec<_> = store.entries().iter().map(|e| e.value.clone()).collect();
        let r = crate::numerics::finite_difference_check(
            |tape, vars| {
                let mut pv = store.bind(tape);
                for (id, v) in layer.param_ids().into_iter().zip(vars) {
                    pv.replace(id, v.clone());
                }
                let (y, l) = layer.forward(&tape.constant(x.clone()), &pv)?;
                let (_, il) = layer.inverse(&y.mul_scalar(0.9), &pv)?;
                Ok(y.square().sum().add(&l.sum()).add(&il.sum()))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn brownian_covariance() {
        let sigma = 0.1;
        let (store, layer) = compile(continuity(3, sigma).unwrap());
        let n = 100_000;
        let (y, _) = forward_values(&layer, &store, &normals(n, 3, 21)).unwrap();
        let mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        for s in 0..3 {
            for t in 0..3 {
                let c = y.column(s).iter().zip(y.column(t)).map(|(a, b)| (a - mean[s]) * (b - mean[t])).sum::<f64>()
                    / (n - 1) as f64;
                let want = sigma * sigma * (s.min(t) + 1) as f64;
                // Var of the product estimator is at most 2·want_s·want_t / n
                let tol = 5.0 * sigma * sigma * 3.0 * (2.0 / n as f64).sqrt();
                assert!((c - want).abs() < tol, "cov({s},{t}) = {c}, want {want}");
            }
        }
    }

    #[test]
    fn hierarchical_intraclass_correlation() {
        let (sigma, nu) = (1.5, 1.0);
        let (store, layer) = compile(hierarchical(1, 3, sigma, nu).unwrap());
        let n = 100_000;
        let (y, _) = forward_values(&layer, &store, &normals(n, 3, 5)).unwrap();
        let a = y.column(1);
        let b = y.column(2);
        let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n as f64;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n as f64;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n as f64;
        let corr = cov / (va * vb).sqrt();
        let want = sigma * sigma / (sigma * sigma + nu * nu);
        // sd of the sample correlation is about (1 − ρ²)/√n
        assert!((corr - want).abs() < 5.0 * (1.0 - want * want) / (n as f64).sqrt(), "{corr} vs {want}");
    }

    #[test]
    fn channels_are_interleaved_chains() {
        let g = continuity_channels(3, 2, 0.5).unwrap();
        assert_eq!(g.total_dim(), 6);
        assert_eq!(g.nodes[5].parents, vec![3]);
        let (store, layer) = compile(g);
        let (y, _) = forward_values(&layer, &store, &ndarray::array![[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]]).unwrap();
        assert_eq!(y, ndarray::array![[0.5, -0.5, 1.0, -1.0, 1.5, -1.5]]);

        let g = smoothness_channels(4, 3, 0.5).unwrap();
        assert_eq!(g.nodes[9].parents, vec![6, 3]);
        assert!(g.nodes[..6].iter().all(|n| n.parents.is_empty()));
    }

    proptest::proptest! {
        #[test]
        fn gated_round_trip_any_gates(
            lam in proptest::collection::vec(0.0..=1.0f64, 4),
            x in proptest::collection::vec(-3.0..3.0f64, 4),
            sigma in 0.05..2.0f64,
        ) {
            let (store, layer) = compile_gated(smoothness(4, sigma).unwrap(), GateConfig::balanced());
            let row = Array2::from_shape_vec((1, 4), x).unwrap();
            let (y, f) = run_with(&layer, &store, &row, Some(&lam), true);
            let (back, i) = run_with(&layer, &store, &y, Some(&lam), false);
            proptest::prop_assert!(max_abs(&row, &back) < 1e-8);
            proptest::prop_assert!((f[[0, 0]] + i[[0, 0]]).abs() < 1e-9);
        }
    }
}
