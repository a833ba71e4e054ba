use graphvae::chem::canonical_key;
use graphvae::graph::DiscreteGraph;
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = DiscreteGraph> {
    (1..=max_n).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        (
            proptest::collection::vec(0..3usize, n),
            proptest::collection::vec(proptest::option::weighted(0.5, 0..3usize), pairs),
        )
            .prop_map(move |(nodes, slots)| {
                let mut edges = Vec::new();
                let mut s = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if let Some(c) = slots[s] {
                            edges.push((i, j, c));
                        }
                        s += 1;
                    }
                }
                DiscreteGraph::from_parts(3, 3, &nodes, &edges).unwrap()
            })
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exhaustive attributed-graph isomorphism test.
fn isomorphic(a: &DiscreteGraph, b: &DiscreteGraph) -> bool {
    let n = a.n();
    if n != b.n() || a.edge_count() != b.edge_count() || a.label() != b.label() {
        return false;
    }
    permutations(n).iter().any(|p| {
        (0..n).all(|i| a.node_class(i) == b.node_class(p[i]))
            && (0..n).all(|i| (0..n).all(|j| a.edge_class(i, j) == b.edge_class(p[i], p[j])))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn key_is_invariant_under_relabeling(
        (g, perm) in graph_strategy(9).prop_flat_map(|g| {
            let n = g.n();
            (Just(g), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        })
    ) {
        prop_assert_eq!(canonical_key(&g), canonical_key(&g.permute(&perm).unwrap()));
    }

    // Small alphabets and dense edges make collisions between
    // non-isomorphic graphs likely if the key were not complete.
    #[test]
    fn equal_keys_exactly_for_isomorphic_graphs(a in graph_strategy(6), b in graph_strategy(6)) {
        prop_assert_eq!(canonical_key(&a) == canonical_key(&b), isomorphic(&a, &b));
    }
}

#[test]
fn regular_graphs_are_told_apart() {
    // a 6-cycle and two triangles share degree sequence and labels
    let hexagon = DiscreteGraph::from_parts(1, 1, &[0; 6], &[(0, 1, 0), (1, 2, 0), (2, 3, 0), (3, 4, 0), (4, 5, 0), (5, 0, 0)]).unwrap();
    let triangles = DiscreteGraph::from_parts(1, 1, &[0; 6], &[(0, 1, 0), (1, 2, 0), (2, 0, 0), (3, 4, 0), (4, 5, 0), (5, 3, 0)]).unwrap();
    assert!(!isomorphic(&hexagon, &triangles));
    assert_ne!(canonical_key(&hexagon), canonical_key(&triangles));
}
