use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nn::{Ctx, EccConv, EdgeLists, GatedPool, Mode, ParamStore};
use super::*;
use crate::matching::Assignment;
use crate::tensor::{Tape, Tensor};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        k: 3,
        d_e: 2,
        d_n: 3,
        latent_dim: 2,
        conv_channels: vec![4, 4],
        pooling_hidden: 5,
        decoder_hidden: vec![6, 7],
        ..Default::default()
    }
}

fn path(classes: &[usize], bonds: &[usize]) -> DiscreteGraph {
    let edges: Vec<_> = bonds.iter().enumerate().map(|(i, &c)| (i, i + 1, c)).collect();
    DiscreteGraph::from_parts(3, 2, classes, &edges).unwrap()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn zero_model(config: ModelConfig) -> GraphVae {
    let mut m = GraphVae::new(config, 0).unwrap();
    for t in m.params_mut().values_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    m
}

fn param_index(m: &GraphVae, name: &str) -> usize {
    m.params().names().iter().position(|n| n == name).unwrap()
}

#[test]
fn zero_weights_give_prior_and_ignorance() {
    let m = zero_model(ModelConfig {
        k: 4,
        ..tiny_config()
    });
    let g = path(&[0, 1, 2], &[0, 1]);
    let post = m.encode(&g, None).unwrap();
    assert_eq!(post.mu, vec![0.0; 2]);
    assert_eq!(post.sigma, vec![1.0; 2]);
    let pg = m.decode(&[0.3, -1.0], None).unwrap();
    assert!(pg.adj_data().iter().all(|&p| p == 0.5));
    assert!(pg.node_data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    assert!(pg.edge_data().iter().all(|&p| (p - 0.5).abs() < 1e-15));
}

#[test]
fn implicit_diagonal_takes_row_maximum() {
    let mut m = zero_model(ModelConfig {
        k: 4,
        implicit_node_prob: true,
        ..tiny_config()
    });
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let bias = param_index(&m, "dec.adj.bias");
    // triangle positions of (0,1), (0,2), (0,3)
    let b = m.params_mut().values_mut()[bias].data_mut();
    b[1] = logit(0.1);
    b[2] = logit(0.7);
    b[3] = logit(0.3);
    let pg = m.decode(&[0.0, 0.0], None).unwrap();
    assert!((pg.adj(0, 0) - 0.7).abs() < 1e-12);
    assert!((pg.adj(2, 2) - 0.7).abs() < 1e-12);
    assert!((pg.adj(1, 1) - 0.5).abs() < 1e-12);
    assert_eq!(pg.adj(0, 2), pg.adj(2, 0));
}

#[test]
fn triangle_positions_are_a_bijection() {
    for k in 1..7 {
        let mut seen = vec![false; k * (k + 1) / 2];
        for a in 0..k {
            for b in a..k {
                let p = tri_pos(k, a, b);
                assert!(!seen[p]);
                seen[p] = true;
                assert_eq!(p, tri_pos(k, b, a));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn kl_examples() {
    let p = |mu: Vec<f64>, sigma: Vec<f64>| LatentPosterior { mu, sigma }.kl_divergence();
    assert_eq!(p(vec![0.0; 3], vec![1.0; 3]), 0.0);
    assert!((p(vec![1.0], vec![1.0]) - 0.5).abs() < 1e-15);
    let expect = 0.5 * (4.0 - 1.0 - 2.0 * 2f64.ln());
    assert!((p(vec![0.0], vec![2.0]) - expect).abs() < 1e-15);
    assert!((expect - 0.8069).abs() < 1e-4);
}

#[test]
fn zero_sigma_sample_is_the_mean() {
    let post = LatentPosterior {
        mu: vec![0.5, -2.0],
        sigma: vec![0.0, 0.0],
    };
    assert_eq!(post.sample(&mut ChaCha8Rng::seed_from_u64(3)), post.mu);
}

#[test]
fn sample_mean_converges() {
    let post = LatentPosterior {
        mu: vec![1.0, -0.5, 0.0, 3.0],
        sigma: vec![1.0; 4],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 100_000;
    let mut mean = [0.0; 4];
    for _ in 0..draws {
        for (m, z) in mean.iter_mut().zip(post.sample(&mut rng)) {
            *m += z / draws as f64;
        }
    }
    for (m, mu) in mean.iter().zip(&post.mu) {
        assert!((m - mu).abs() < 0.02, "{m} vs {mu}");
    }
    let a = post.sample(&mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, post.sample(&mut ChaCha8Rng::seed_from_u64(5)));
}

fn ecc_fixture(rng: &mut ChaCha8Rng) -> (ParamStore, EccConv) {
    let mut store = ParamStore::default();
    let conv = EccConv::new(&mut store, "c", 3, 2, 3, rng);
    (store, conv)
}

fn run_ecc(store: &ParamStore, conv: &EccConv, feats: &Tensor, edges: &EdgeLists) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let mut ctx = Ctx {
        tape: &mut tape,
        vars: &vars,
        buffers: store.buffers(),
        mode: Mode::Eval,
        stats: Vec::new(),
    };
    let h = ctx.tape.constant(feats.clone());
    let out = conv.forward(&mut ctx, h, edges, Aggregation::Mean).unwrap();
    (tape, vars, out)
}

fn edge_lists(n: usize, d_e: usize, edges: &[(usize, usize, usize)]) -> EdgeLists {
    let mut by_class = vec![Vec::new(); d_e];
    let mut degree = vec![0; n];
    for &(i, j, c) in edges {
        by_class[c].push((i, j));
        by_class[c].push((j, i));
        degree[i] += 1;
        degree[j] += 1;
    }
    EdgeLists {
        nodes: n,
        by_class,
        degree,
    }
}

#[test]
fn ecc_without_edges_is_self_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (store, conv) = ecc_fixture(&mut rng);
    let feats = Tensor::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 3.0]]).unwrap();
    let (tape, _, out) = run_ecc(&store, &conv, &feats, &edge_lists(2, 3, &[]));
    let w = &store.values()[conv.self_w];
    let b = &store.values()[conv.bias];
    for i in 0..2 {
        for o in 0..2 {
            let expect: f64 = (0..3).map(|c| feats.at2(i, c) * w.at2(c, o)).sum::<f64>() + b.data()[o];
            assert!((tape.value(out).at2(i, o) - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn ecc_single_edge_uses_its_class_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (store, conv) = ecc_fixture(&mut rng);
    let feats = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 1.0]]).unwrap();
    let (tape, _, out) = run_ecc(&store, &conv, &feats, &edge_lists(2, 3, &[(0, 1, 2)]));
    let (base_tape, _, base) = run_ecc(&store, &conv, &feats, &edge_lists(2, 3, &[]));
    let wt = &store.values()[conv.edge_w[2]];
    for o in 0..2 {
        let msg: f64 = (0..3).map(|c| feats.at2(1, c) * wt.at2(c, o)).sum();
        let got = tape.value(out).at2(0, o) - base_tape.value(base).at2(0, o);
        assert!((got - msg).abs() < 1e-14);
    }
}

#[test]
fn ecc_filter_gradients_match_finite_differences() {
    let edges = [(0, 1, 0), (1, 2, 2), (2, 3, 1), (3, 0, 2), (1, 3, 0)];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut store, conv) = ecc_fixture(&mut rng);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let feats = Tensor::from_rows(&rows).unwrap();
        let lists = edge_lists(4, 3, &edges);
        let probe: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |store: &ParamStore| {
            let (mut tape, vars, out) = run_ecc(store, &conv, &feats, &lists);
            let s = tape.dot_const(out, probe.clone()).unwrap();
            (tape, vars, s)
        };
        let (tape, vars, s) = objective(&store);
        let grads = tape.backward(s).unwrap();
        for &p in &conv.edge_w {
            let analytic = grads.get_or_zeros(vars[p], &[3, 2]);
            for idx in 0..6 {
                let h = 1e-6;
                let orig = store.values()[p].data()[idx];
                store.values_mut()[p].data_mut()[idx] = orig + h;
                let (t1, _, up) = objective(&store);
                store.values_mut()[p].data_mut()[idx] = orig - h;
                let (t2, _, down) = objective(&store);
                store.values_mut()[p].data_mut()[idx] = orig;
                let fd = (t1.value(up).item() - t2.value(down).item()) / (2.0 * h);
                assert!((fd - analytic.data()[idx]).abs() < 1e-4, "seed {seed}: {fd} vs {}", analytic.data()[idx]);
            }
        }
    }
}

fn run_pool(store: &ParamStore, pool: &GatedPool, feats: &Tensor, segment: &[usize], graphs: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let mut ctx = Ctx {
        tape: &mut tape,
        vars: &vars,
        buffers: store.buffers(),
        mode: Mode::Eval,
        stats: Vec::new(),
    };
    let h = ctx.tape.constant(feats.clone());
    let out = pool.forward(&mut ctx, h, segment, graphs).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn gated_pool_symmetries() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::default();
    let pool = GatedPool::new(&mut store, "p", 2, 3, &mut rng);
    let rows = vec![vec![0.1, -0.4], vec![1.0, 0.3], vec![-0.7, 0.9]];
    let a = run_pool(&store, &pool, &Tensor::from_rows(&rows).unwrap(), &[0, 0, 0], 1);
    let shuffled = vec![rows[2].clone(), rows[0].clone(), rows[1].clone()];
    let b = run_pool(&store, &pool, &Tensor::from_rows(&shuffled).unwrap(), &[0, 0, 0], 1);
    let doubled: Vec<_> = rows.iter().chain(&rows).cloned().collect();
    let d = run_pool(&store, &pool, &Tensor::from_rows(&doubled).unwrap(), &[0; 6], 1);
    for o in 0..3 {
        assert!((a[o] - b[o]).abs() < 1e-14);
        assert!((d[o] - 2.0 * a[o]).abs() < 1e-14);
    }
    let single = run_pool(&store, &pool, &Tensor::from_rows(&rows[..1]).unwrap(), &[0], 1);
    let lin = |l: &nn::Linear, o: usize| {
        let w = &store.values()[l.w];
        rows[0][0] * w.at2(0, o) + rows[0][1] * w.at2(1, o) + store.values()[l.b].data()[o]
    };
    for (o, s) in single.iter().enumerate() {
        let gate = 1.0 / (1.0 + (-lin(&pool.gate, o)).exp());
        assert!((s - gate * lin(&pool.value, o).tanh()).abs() < 1e-14);
    }
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let mut ctx = Ctx {
        tape: &mut tape,
        vars: &vars,
        buffers: store.buffers(),
        mode: Mode::Eval,
        stats: Vec::new(),
    };
    let h = ctx.tape.constant(Tensor::from_rows(&rows).unwrap());
    assert!(pool.forward(&mut ctx, h, &[0, 0, 0], 2).is_err());
}

#[test]
fn label_presence_must_match_mode() {
    let g = path(&[0, 1], &[0]);
    let plain = GraphVae::new(tiny_config(), 1).unwrap();
    assert!(plain.encode(&g, Some(&g.label())).is_err());
    let cond = GraphVae::new(
        ModelConfig {
            conditional: true,
            ..tiny_config()
        },
        1,
    )
    .unwrap();
    assert!(cond.encode(&g, None).is_err());
    assert!(cond.encode(&g, Some(&GraphLabel(vec![1, 1]))).is_err());
    let post = cond.encode(&g, Some(&g.label())).unwrap();
    assert_eq!(post.mu.len(), 2);
    let pg = cond.decode(&post.mu, Some(&g.label())).unwrap();
    pg.validate(1e-9).unwrap();
    assert!(cond.decode(&[0.0; 3], Some(&g.label())).is_err());
}

/// Total objective with noise and assignments held fixed.
fn fixed_loss(m: &GraphVae, graphs: &[&DiscreteGraph], noise: &Tensor, xs: &[Assignment]) -> f64 {
    m.objective(graphs, &LossWeights::default(), noise, Some(xs), Mode::Train, 0)
        .unwrap()
        .stats
        .loss
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for (seed, conditional) in [(7u64, false), (8, true)] {
        let mut m = GraphVae::new(
            ModelConfig {
                conditional,
                ..tiny_config()
            },
            seed,
        )
        .unwrap();
        let g1 = DiscreteGraph::from_parts(3, 2, &[0, 1, 2], &[(0, 1, 0), (1, 2, 1)]).unwrap();
        let g2 = DiscreteGraph::from_parts(3, 2, &[2, 0], &[(0, 1, 1)]).unwrap();
        let graphs = [&g1, &g2];
        let noise = Tensor::from_rows(&[vec![0.3, -1.1], vec![0.8, 0.2]]).unwrap();
        let xs = vec![
            Assignment::new(3, vec![2, 0, 1]).unwrap(),
            Assignment::new(3, vec![1, 2]).unwrap(),
        ];
        let obj = m
            .objective(&graphs, &LossWeights::default(), &noise, Some(&xs), Mode::Train, 0)
            .unwrap();
        let grads = obj.gradients().unwrap();
        let analytic: Vec<Tensor> = obj
            .params
            .iter()
            .zip(m.params().values())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        let mut worst: f64 = 0.0;
        for p in 0..m.params().len() {
            for idx in 0..m.params().values()[p].len() {
                let h = 1e-6;
                let orig = m.params().values()[p].data()[idx];
                m.params_mut().values_mut()[p].data_mut()[idx] = orig + h;
                let up = fixed_loss(&m, &graphs, &noise, &xs);
                m.params_mut().values_mut()[p].data_mut()[idx] = orig - h;
                let down = fixed_loss(&m, &graphs, &noise, &xs);
                m.params_mut().values_mut()[p].data_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[p].data()[idx];
                if fd.abs().max(a.abs()) > 1e-6 {
                    worst = worst.max(relative_gap(fd, a));
                }
                assert!(
                    relative_gap(fd, a) < 1e-3 || (fd - a).abs() < 1e-7,
                    "{} [{idx}]: fd {fd} vs analytic {a}",
                    m.params().names()[p]
                );
            }
        }
        assert!(worst < 1e-3);
    }
}

#[test]
fn copies_of_one_graph_give_the_single_graph_gradient() {
    let m = GraphVae::new(tiny_config(), 3).unwrap();
    let g = DiscreteGraph::from_parts(3, 2, &[0, 2, 1], &[(0, 1, 0), (1, 2, 1)]).unwrap();
    let x = Assignment::new(3, vec![0, 1, 2]).unwrap();
    let grads_for = |copies: usize| {
        let graphs = vec![&g; copies];
        let noise = Tensor::new(vec![copies, 2], [0.4, -0.2].repeat(copies)).unwrap();
        let xs = vec![x.clone(); copies];
        let obj = m
            .objective(&graphs, &LossWeights::default(), &noise, Some(&xs), Mode::Train, 0)
            .unwrap();
        let grads = obj.gradients().unwrap();
        obj.params
            .iter()
            .zip(m.params().values())
            .flat_map(|(&v, t)| grads.get_or_zeros(v, t.shape()).into_data())
            .collect::<Vec<f64>>()
    };
    let one = grads_for(1);
    let many = grads_for(4);
    for (a, b) in one.iter().zip(&many) {
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }
}

#[test]
fn training_on_one_graph_decreases_loss() {
    let config = ModelConfig {
        k: 4,
        d_e: 2,
        d_n: 3,
        latent_dim: 4,
        conv_channels: vec![8, 8],
        pooling_hidden: 16,
        decoder_hidden: vec![16, 32],
        deterministic_encoder: true,
        ..Default::default()
    };
    let g = DiscreteGraph::from_parts(3, 2, &[0, 1, 2, 0], &[(0, 1, 0), (1, 2, 1), (2, 3, 0)]).unwrap();
    let train = TrainConfig {
        weights: LossWeights {
            kl_weight: 0.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut t = Trainer::new(GraphVae::new(config, 5).unwrap(), train, 9);
    let losses: Vec<f64> = (0..51).map(|_| t.step(&[&g, &g]).unwrap().loss).collect();
    let stalls = losses.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(stalls <= 5, "{stalls} non-decreasing steps: {losses:?}");
    assert_eq!(t.steps(), 51);

    let before = t.model().params().values().to_vec();
    t.set_learning_rate(0.0);
    t.step(&[&g, &g]).unwrap();
    assert_eq!(t.config().adam.lr, 0.0);
    assert_eq!(t.model().params().values(), &before[..], "lr 0 must freeze parameters");
    assert_eq!(t.steps(), 52);
}

#[test]
fn elbo_is_bounded_by_negative_kl() {
    let m = GraphVae::new(tiny_config(), 12).unwrap();
    let g = DiscreteGraph::from_parts(3, 2, &[0, 2, 1], &[(0, 1, 0), (1, 2, 1)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = m.elbo(&g, None, &LossWeights::default(), 75, &mut rng).unwrap();
    assert!(r.reconstruction >= 0.0);
    assert!(r.elbo <= -r.kl);
    let again = m
        .elbo(&g, None, &LossWeights::default(), 75, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    assert_eq!(r, again);
}

fn arb_graph() -> impl Strategy<Value = DiscreteGraph> {
    (1usize..=5)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..3, n),
                proptest::collection::vec(proptest::option::of(0usize..2), n * (n - 1) / 2),
                Just(n),
            )
        })
        .prop_map(|(nodes, slots, n)| {
            let mut edges = Vec::new();
            let mut s = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if let Some(c) = slots[s] {
                        edges.push((i, j, c));
                    }
                    s += 1;
                }
            }
            DiscreteGraph::from_parts(3, 2, &nodes, &edges).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoding_ignores_node_order(g in arb_graph(), seed in 0u64..1000) {
        let m = GraphVae::new(ModelConfig { k: 5, ..tiny_config() }, seed).unwrap();
        let n = g.n();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(seed as usize % n);
        let a = m.encode(&g, None).unwrap();
        let b = m.encode(&g.permute(&perm).unwrap(), None).unwrap();
        for (x, y) in a.mu.iter().zip(&b.mu).chain(a.sigma.iter().zip(&b.sigma)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn decoded_graphs_are_valid(z in proptest::collection::vec(-50.0f64..50.0, 2), implicit in any::<bool>()) {
        let m = GraphVae::new(ModelConfig { implicit_node_prob: implicit, ..tiny_config() }, 3).unwrap();
        let pg = m.decode(&z, None).unwrap();
        prop_assert!(pg.validate(1e-9).is_ok());
    }

    #[test]
    fn kl_is_nonnegative(mu in proptest::collection::vec(-5.0f64..5.0, 1..6), s in 0.05f64..5.0) {
        let sigma = vec![s; mu.len()];
        let kl = LatentPosterior { mu, sigma }.kl_divergence();
        prop_assert!(kl >= -1e-15);
    }
}
