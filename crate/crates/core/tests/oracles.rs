mod common;

use cecf_core::analysis::{self, shapley::permutation_shapley};
use cecf_core::autodiff::{elu, Tape};
use cecf_core::graph::{
    self, batch_edges, load_graph, normalize_adjacency, write_graph, EdgeBatch,
};
use cecf_core::model::{self, ModelDims, ModelState};
use cecf_core::optim::adam_step;
use cecf_core::training::{self, hsic_value, loss_pre, probe_step, train_run, train_step};
use cecf_core::{synth, Error, Regularizer, SynthConfig, Tensor, TrainConfig};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn dims() -> ModelDims {
    ModelDims {
        hidden: 6,
        embed: 4,
        treatment: 5,
        attention: 3,
        probe_hidden: 6,
    }
}

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        seed,
        dims: dims(),
        ..TrainConfig::default()
    }
}

fn small_synth(seed: u64) -> cecf_core::Graph {
    synth::generate(&SynthConfig {
        n: 40,
        m: 120,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

// Plain-loop reference implementations of the forward passes.

fn mm(a: &[Vec<f64>], b: &Tensor) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b.cols())
                .map(|j| row.iter().enumerate().map(|(k, v)| v * b.get(k, j)).sum())
                .collect()
        })
        .collect()
}

fn add_bias(a: Vec<Vec<f64>>, b: &Tensor) -> Vec<Vec<f64>> {
    a.into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, v)| v + b.get(0, j))
                .collect()
        })
        .collect()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mlp(x: Vec<Vec<f64>>, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor) -> Vec<Vec<f64>> {
    let h: Vec<Vec<f64>> = add_bias(mm(&x, w1), b1)
        .into_iter()
        .map(|r| r.into_iter().map(elu).collect())
        .collect();
    add_bias(mm(&h, w2), b2)
}

fn reference_embed(state: &ModelState, x: &Tensor, adj: &Tensor) -> Vec<Vec<f64>> {
    let a = rows(adj);
    let apply_adj = |h: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let t = Tensor::from_fn(h.len(), h[0].len(), |r, c| h[r][c]);
        mm(&a, &t)
    };
    let e = &state.encoder;
    let h = add_bias(apply_adj(mm(&rows(x), &e.w1)), &e.b1);
    let h: Vec<Vec<f64>> = h
        .into_iter()
        .map(|r| r.into_iter().map(elu).collect())
        .collect();
    add_bias(apply_adj(mm(&h, &e.w2)), &e.b2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reference_logits(
    state: &ModelState,
    zs: &[Vec<f64>],
    zd: &[Vec<f64>],
    s: &Tensor,
) -> Vec<Vec<f64>> {
    let h = &state.head;
    let t = mlp(rows(s), &h.t_w1, &h.t_b1, &h.t_w2, &h.t_b2);
    let q = mm(&t, &h.w_q);
    let (ks, kd) = (mm(zs, &h.w_k), mm(zd, &h.w_k));
    let (vs, vd) = (mm(zs, &h.w_v), mm(zd, &h.w_v));
    let scale = (h.w_q.cols() as f64).sqrt();
    let mut joint = Vec::new();
    for e in 0..t.len() {
        let a = dot(&q[e], &ks[e]) / scale;
        let b = dot(&q[e], &kd[e]) / scale;
        let top = a.max(b);
        let (ea, eb) = ((a - top).exp(), (b - top).exp());
        let (wa, wb) = (ea / (ea + eb), eb / (ea + eb));
        let mut row: Vec<f64> = vs[e]
            .iter()
            .zip(&vd[e])
            .map(|(x, y)| wa * x + wb * y)
            .collect();
        row.extend(&t[e]);
        joint.push(row);
    }
    add_bias(mm(&joint, &h.w_o), &h.b_o)
}

#[test]
fn forward_passes_match_plain_loop_reference() {
    let g = random_graph(12, 30, 3, 4, 3, 5);
    let adj = normalize_adjacency(&g);
    let state = ModelState::for_graph(&g, dims(), 11);
    let z = state.embed(&g, &adj).unwrap();
    let z_ref = reference_embed(&state, g.node_features(), adj.matrix());
    let z_ref_t = Tensor::from_fn(z.rows(), z.cols(), |r, c| z_ref[r][c]);
    assert!(max_abs_diff(&z, &z_ref_t) < 1e-12);

    let edges: Vec<usize> = (0..g.num_edges()).collect();
    let out = state.edge_outputs(&g, &z, &edges).unwrap();
    let zs: Vec<Vec<f64>> = g.edges().iter().map(|&(a, _)| z_ref[a].clone()).collect();
    let zd: Vec<Vec<f64>> = g.edges().iter().map(|&(_, b)| z_ref[b].clone()).collect();
    let logits = reference_logits(&state, &zs, &zd, g.edge_features());
    let want = Tensor::from_fn(logits.len(), logits[0].len(), |r, c| logits[r][c]);
    assert!(max_abs_diff(&out.logits, &want) < 1e-12);

    let h = &state.head;
    let t = mlp(rows(g.edge_features()), &h.t_w1, &h.t_b1, &h.t_w2, &h.t_b2);
    let t = Tensor::from_fn(t.len(), t[0].len(), |r, c| t[r][c]);
    assert!(max_abs_diff(&out.treatment, &t) < 1e-12);

    let p = &state.probe;
    let pair: Vec<Vec<f64>> = zs
        .iter()
        .zip(&zd)
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    let s_hat = mlp(pair, &p.w1, &p.b1, &p.w2, &p.b2);
    let s_hat = Tensor::from_fn(s_hat.len(), s_hat[0].len(), |r, c| s_hat[r][c]);
    let zs_t = out.node_pairs.slice_cols(0, 4).unwrap();
    let zd_t = out.node_pairs.slice_cols(4, 8).unwrap();
    assert!(max_abs_diff(&state.probe_predict(&zs_t, &zd_t).unwrap(), &s_hat) < 1e-12);
}

#[test]
fn split_sizes_for_five_and_103_edges() {
    let s = graph::split_indices(5, 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 2, 2));
    let s = graph::split_indices(103, 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (20, 40, 43));
}

#[test]
fn hsic_of_independent_normals_is_small() {
    let mut total = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::from_fn(512, 3, |_, _| StandardNormal.sample(&mut rng));
        let s = Tensor::from_fn(512, 2, |_, _| StandardNormal.sample(&mut rng));
        total += hsic_value(&z, &s).unwrap();
    }
    assert!(total / 10.0 < 0.01, "mean HSIC {}", total / 10.0);
}

#[test]
fn probe_steps_descend_on_fixed_batch() {
    let g = small_synth(2);
    let adj = normalize_adjacency(&g);
    let mut state = ModelState::for_graph(&g, dims(), 3);
    let frozen = (state.encoder.clone(), state.head.clone());
    let batch = EdgeBatch::gather(&g, &(0..40).collect::<Vec<_>>()).unwrap();
    let mut prev = f64::INFINITY;
    for _ in 0..6 {
        let l = probe_step(&mut state, &batch, &g, &adj, 1e-3).unwrap();
        assert!(l < prev, "{l} !< {prev}");
        prev = l;
    }
    assert_eq!((state.encoder, state.head), frozen);
}

#[test]
fn zero_gamma_main_step_is_plain_cross_entropy_step() {
    let g = small_synth(4);
    let adj = normalize_adjacency(&g);
    let cfg = TrainConfig {
        gamma: 0.0,
        ..small_cfg(0)
    };
    let batch = EdgeBatch::gather(&g, &(10..50).collect::<Vec<_>>()).unwrap();
    let start = ModelState::for_graph(&g, dims(), 8);

    let mut stepped = start.clone();
    train_step(&mut stepped, &batch, &g, &adj, &cfg).unwrap();

    let mut manual = start.clone();
    let mut tape = Tape::new();
    let enc = manual.encoder.bind(&mut tape, true);
    let head = manual.head.bind(&mut tape, true);
    let x = tape.constant(g.node_features().clone());
    let a = tape.constant(adj.matrix().clone());
    let z = model::gcn_forward(&mut tape, &enc, x, a).unwrap();
    let out = model::predict_logits(&mut tape, &head, z, &batch).unwrap();
    let l = loss_pre(&mut tape, out.logits, &batch.labels).unwrap();
    let grads = tape.backward(l).unwrap();
    let mut gr = enc.grads(&tape, &grads);
    gr.extend(head.grads(&tape, &grads));
    let mut params = manual.encoder.tensors_mut();
    params.extend(manual.head.tensors_mut());
    adam_step(&mut manual.main_opt, &mut params, &gr, cfg.lr_main).unwrap();

    for (a, b) in stepped
        .encoder
        .tensors()
        .iter()
        .zip(manual.encoder.tensors())
    {
        assert!(max_abs_diff(a, b) < 1e-14);
    }
    for (a, b) in stepped.head.tensors().iter().zip(manual.head.tensors()) {
        assert!(max_abs_diff(a, b) < 1e-14);
    }
    // The probe still trains.
    assert_ne!(stepped.probe, start.probe);
}

#[test]
fn adversarial_term_enters_encoder_gradient_with_minus_gamma() {
    let g = small_synth(9);
    let adj = normalize_adjacency(&g);
    let cfg = TrainConfig {
        gamma: 0.37,
        ..small_cfg(9)
    };
    let batch = EdgeBatch::gather(&g, &(0..30).collect::<Vec<_>>()).unwrap();
    let state = ModelState::for_graph(&g, dims(), 2);
    let mut tape = Tape::new();
    let obj = training::main_objective(&mut tape, &state, &batch, &g, &adj, &cfg, None).unwrap();
    let total = obj.encoder.grads(&tape, &tape.backward(obj.total).unwrap());
    let pre = obj.encoder.grads(&tape, &tape.backward(obj.l_pre).unwrap());
    let rep = obj.encoder.grads(&tape, &tape.backward(obj.l_rep).unwrap());
    for ((t, p), r) in total.iter().zip(&pre).zip(&rep) {
        let want = p.sub(&r.scale(cfg.gamma)).unwrap();
        assert!(max_abs_diff(t, &want) < 1e-12);
    }
    // The probe is frozen in the main step.
    let grads = tape.backward(obj.total).unwrap();
    assert!(obj.probe.vars().iter().all(|&v| grads.get(v).is_none()));
}

#[test]
fn oracle_predictions_score_perfectly() {
    let labels = vec![0, 1, 1, 2, 0, 2, 2];
    let report = training::score_predictions(&labels, labels.clone(), 3).unwrap();
    assert_eq!((report.bacc, report.macro_f1), (1.0, 1.0));
}

#[test]
fn none_mode_equals_zero_gamma() {
    let g = small_synth(6);
    let split = graph::split_edges(&g, 6).unwrap();
    let none = TrainConfig {
        regularizer: Regularizer::None,
        gamma: 0.5,
        ..small_cfg(6)
    };
    let zero = TrainConfig {
        gamma: 0.0,
        ..small_cfg(6)
    };
    let a = train_run(&g, &split, &none, None).unwrap();
    let b = train_run(&g, &split, &zero, None).unwrap();
    assert_eq!(a.last.encoder, b.last.encoder);
    assert_eq!(a.last.head, b.last.head);
}

#[test]
fn zero_epochs_return_initial_state() {
    let g = small_synth(1);
    let split = graph::split_edges(&g, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..small_cfg(1)
    };
    let (state, history) = training::train(&g, &split, &cfg).unwrap();
    assert_eq!(state, ModelState::for_graph(&g, dims(), 1));
    assert!(history.is_empty());
    assert_eq!(history.best_epoch, None);
}

#[test]
fn training_is_deterministic_and_best_epoch_is_argmax() {
    let g = small_synth(3);
    let split = graph::split_edges(&g, 3).unwrap();
    let cfg = small_cfg(3);
    let (a, ha) = training::train(&g, &split, &cfg).unwrap();
    let (b, hb) = training::train(&g, &split, &cfg).unwrap();
    assert_eq!(a, b);
    let strip = |h: &training::TrainHistory| -> Vec<(f64, f64, f64)> {
        h.epochs
            .iter()
            .map(|e| (e.l_pre, e.l_rep, e.val_bacc))
            .collect()
    };
    assert_eq!(strip(&ha), strip(&hb));
    let best = ha.best_epoch.unwrap();
    let top = ha
        .epochs
        .iter()
        .map(|e| e.val_bacc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(ha.epochs[best].val_bacc, top);
    assert!(ha.epochs[..best].iter().all(|e| e.val_bacc < top));
}

#[test]
fn divergence_reports_epoch_and_batch() {
    let g = small_synth(5);
    let split = graph::split_edges(&g, 5).unwrap();
    let cfg = small_cfg(5);
    let poisoned = |tape: &mut Tape, logits, labels: &[usize]| {
        let l = loss_pre(tape, logits, labels)?;
        Ok(tape.scale(l, f64::NAN))
    };
    match train_run(&g, &split, &cfg, Some(&poisoned)) {
        Err(Error::Divergence {
            loss, epoch, batch, ..
        }) => {
            assert_eq!(loss, "l_pre");
            assert_eq!((epoch, batch), (Some(1), Some(1)));
        }
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn graph_files_round_trip() {
    let g = synth::generate(&SynthConfig {
        n: 30,
        m: 60,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges) = (dir.path().join("nodes.csv"), dir.path().join("edges.csv"));
    write_graph(&g, &nodes, &edges).unwrap();
    assert_eq!(load_graph(&nodes, &edges).unwrap(), g);
}

#[test]
fn batches_partition_the_training_split() {
    let g = small_synth(7);
    let split = graph::split_edges(&g, 7).unwrap();
    let batches = batch_edges(&g, &split.train, 5, 7, 1).unwrap();
    let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.edges.clone()).collect();
    seen.sort_unstable();
    let mut want = split.train.clone();
    want.sort_unstable();
    assert_eq!(seen, want);
}

// Shapley estimator against exact enumeration.

fn estimate(model: &ToyModel, x: &[f64], base: &[f64], perms: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permutation_shapley(x, base, |t| Ok(model.eval_rows(t)), perms, &mut rng).unwrap()
}

fn toy_case(d: usize, seed: u64) -> (ToyModel, Vec<f64>, Vec<f64>, Vec<f64>) {
    let model = ToyModel::random(d, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let x: Vec<f64> = (0..d).map(|_| draw()).collect();
    let base: Vec<f64> = (0..d).map(|_| 0.3 * draw()).collect();
    let exact = exact_shapley(d, |m| model.coalition_value(&x, &base, m));
    (model, x, base, exact)
}

#[test]
fn exact_oracle_satisfies_efficiency_and_symmetry() {
    let (model, x, base, exact) = toy_case(6, 1);
    let total: f64 = exact.iter().sum();
    assert!((total - (model.eval(&x) - model.eval(&base))).abs() < 1e-12);

    // Features 0 and 1 enter symmetrically.
    let sym = |m: &[bool]| (m[0] as u8 + m[1] as u8) as f64 * 0.5 + m[2] as u8 as f64;
    let phi = exact_shapley(4, sym);
    assert!((phi[0] - phi[1]).abs() < 1e-15);
    assert!(phi[3].abs() < 1e-15);
}

#[test]
fn estimator_is_within_five_percent_at_500_permutations() {
    for (d, seed) in [(4, 0), (6, 1), (8, 2)] {
        let (model, x, base, exact) = toy_case(d, seed);
        let err = relative_l2(&estimate(&model, &x, &base, 500, seed), &exact);
        assert!(err < 0.05, "d={d}: relative error {err}");
    }
}

#[test]
fn estimator_error_halves_as_permutations_quadruple() {
    let (model, x, base, exact) = toy_case(6, 3);
    let rms = |perms: usize| -> f64 {
        let errs: Vec<f64> = (0..40)
            .map(|s| relative_l2(&estimate(&model, &x, &base, perms, 1000 + s), &exact).powi(2))
            .collect();
        (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
    };
    let (e1, e2, e3) = (rms(125), rms(500), rms(2000));
    for ratio in [e1 / e2, e2 / e3] {
        assert!((1.5..2.7).contains(&ratio), "errors {e1} {e2} {e3}");
    }
}

#[test]
fn grouped_shapley_is_independent_of_thread_count() {
    let g = small_synth(8);
    let adj = normalize_adjacency(&g);
    let split = graph::split_edges(&g, 8).unwrap();
    let state = ModelState::for_graph(&g, dims(), 8);
    let sample = analysis::shapley::sample_edges(&split.test, 10, 8);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                analysis::shapley_group(&state, &g, &adj, &sample, &split.train, 16, 8).unwrap()
            })
    };
    assert_eq!(run(1), run(4));
}

// Metrics against a rational brute-force oracle.

#[test]
fn metrics_match_rational_oracle_on_random_confusions() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let c = rng.random_range(2..6);
        let counts: Vec<Vec<u64>> = (0..c)
            .map(|t| {
                (0..c)
                    .map(|p| rng.random_range(0..50u64) + u64::from(t == p))
                    .collect()
            })
            .collect();
        let conf = analysis::ConfusionCounts::new(counts.clone()).unwrap();
        let (bacc, f1) = rational_metrics(&counts);
        assert!((analysis::bacc(&conf).unwrap() - ratio_to_f64(bacc)).abs() < 1e-12);
        assert!((analysis::macro_f1(&conf).unwrap() - ratio_to_f64(f1)).abs() < 1e-12);
    }
}
