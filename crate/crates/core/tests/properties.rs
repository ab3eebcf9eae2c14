mod common;

use cecf_core::analysis::{self, cca, ConfusionCounts};
use cecf_core::autodiff::softmax_rows;
use cecf_core::graph::{self, load_graph, normalize_adjacency, write_graph};
use cecf_core::model::{ModelDims, ModelState};
use cecf_core::training::hsic_value;
use cecf_core::{Graph, Tensor};
use common::*;
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(rows, cols, v).unwrap())
}

fn sized_tensor(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| tensor(r, c))
}

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (3usize..20, 1usize..4, 1usize..4, 2usize..4, any::<u64>()).prop_flat_map(
        |(n, d1, d2, c, seed)| {
            (c..=n * (n - 1) / 2).prop_map(move |m| random_graph(n, m, d1, d2, c, seed))
        },
    )
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
fn spectral_radius(a: &Tensor) -> f64 {
    let n = a.rows();
    let mut v = Tensor::from_fn(n, 1, |r, _| 1.0 + r as f64 * 0.01);
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = a.matmul(&v).unwrap();
        let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.scale(1.0 / norm);
    }
    lambda
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(x in sized_tensor(6, 6), shift in -50.0f64..50.0) {
        let p = softmax_rows(&x);
        for r in 0..p.rows() {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let q = softmax_rows(&x.map(|v| v + shift));
        prop_assert!(max_abs_diff(&p, &q) < 1e-12);
    }

    #[test]
    fn argmax_ignores_per_row_shift(x in sized_tensor(6, 5), shift in -100.0f64..100.0) {
        prop_assert_eq!(x.argmax_rows(), x.map(|v| v + shift).argmax_rows());
    }

    #[test]
    fn split_is_an_exact_partition(m in 5usize..400, seed in any::<u64>()) {
        let s = graph::split_indices(m, seed).unwrap();
        let unit = m / 5;
        prop_assert_eq!(s.train.len(), unit);
        prop_assert_eq!(s.val.len(), 2 * unit);
        prop_assert_eq!(s.test.len(), m - 3 * unit);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn normalized_adjacency_is_symmetric_with_unit_radius(g in graph_strategy()) {
        let a = normalize_adjacency(&g).into_inner();
        prop_assert!(max_abs_diff(&a, &a.transpose()) < 1e-15);
        prop_assert!(spectral_radius(&a) <= 1.0 + 1e-9);
    }

    #[test]
    fn encoder_is_permutation_equivariant(g in graph_strategy(), perm_seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let n = g.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        // Node i of the original becomes node perm[i].
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let x = g.node_features().select_rows(&inverse).unwrap();
        let edges = g.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let h = Graph::new(x, edges, g.edge_features().clone(), g.labels().to_vec(), g.num_classes()).unwrap();
        let dims = ModelDims { hidden: 4, embed: 3, ..ModelDims::default() };
        let state = ModelState::for_graph(&g, dims, 1);
        let z = state.embed(&g, &normalize_adjacency(&g)).unwrap();
        let zp = state.embed(&h, &normalize_adjacency(&h)).unwrap();
        prop_assert!(max_abs_diff(&z.select_rows(&inverse).unwrap(), &zp) < 1e-12);
    }

    #[test]
    fn metrics_are_bounded_and_scale_invariant(
        counts in (2usize..5).prop_flat_map(|c| prop::collection::vec(prop::collection::vec(0u64..30, c), c)),
        k in 2u64..5,
    ) {
        let counts: Vec<Vec<u64>> = counts
            .into_iter()
            .enumerate()
            .map(|(t, mut row)| { row[t] += 1; row })
            .collect();
        let conf = ConfusionCounts::new(counts.clone()).unwrap();
        let (b, f) = (analysis::bacc(&conf).unwrap(), analysis::macro_f1(&conf).unwrap());
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((0.0..=1.0).contains(&f));
        let scaled = ConfusionCounts::new(counts.iter().map(|r| r.iter().map(|v| v * k).collect()).collect()).unwrap();
        prop_assert!((analysis::bacc(&scaled).unwrap() - b).abs() < 1e-12);
        prop_assert!((analysis::macro_f1(&scaled).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn hsic_is_non_negative(z in (2usize..30).prop_flat_map(|b| (tensor(b, 3), tensor(b, 2)))) {
        prop_assert!(hsic_value(&z.0, &z.1).unwrap() >= -1e-12);
    }

    #[test]
    fn cca_is_invariant_under_invertible_maps(seed in any::<u64>(), mix in tensor(3, 3)) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let m = mix.add(&Tensor::identity(3).scale(6.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::from_fn(200, 3, |_, _| StandardNormal.sample(&mut rng));
        let noise = Tensor::from_fn(200, 2, |_, _| StandardNormal.sample(&mut rng));
        let b = a.slice_cols(0, 2).unwrap().add(&noise).unwrap();
        let base = cca(&a, &b, 1e-8).unwrap();
        let mapped = cca(&a.matmul(&m).unwrap(), &b, 1e-8).unwrap();
        prop_assert!((base.leading - mapped.leading).abs() < 1e-3);
        prop_assert!(base.coefficients.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Corrupting a single byte of a valid dataset either still loads or
    /// fails with an error; it never panics.
    #[test]
    fn loader_survives_byte_mutations(pos in any::<prop::sample::Index>(), byte in any::<u8>(), which in any::<bool>()) {
        let g = random_graph(8, 12, 2, 2, 2, 3);
        let dir = tempfile::tempdir().unwrap();
        let (nodes, edges) = (dir.path().join("nodes.csv"), dir.path().join("edges.csv"));
        write_graph(&g, &nodes, &edges).unwrap();
        let target = if which { &nodes } else { &edges };
        let mut bytes = std::fs::read(target).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] = byte;
        std::fs::write(target, &bytes).unwrap();
        let _ = load_graph(&nodes, &edges);
    }
}
