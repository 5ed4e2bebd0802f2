//! Label graph construction invariants and their effect on attention.

use lamp_core::{GraphMode, InputGraph, LabelGraph};
use proptest::prelude::*;

fn label_sets() -> impl Strategy<Value = (usize, Vec<Vec<u32>>)> {
    (1usize..9).prop_flat_map(|l| {
        let set = prop::collection::btree_set(0..l as u32, 0..=l).prop_map(|s| s.into_iter().collect::<Vec<_>>());
        (Just(l), prop::collection::vec(set, 0..12))
    })
}

proptest! {
    #[test]
    fn cooccurrence_is_exactly_the_observed_pairs((l, sets) in label_sets()) {
        let g = LabelGraph::cooccurrence(&sets, l).unwrap();
        prop_assert_eq!(g.mode(), GraphMode::Prior);
        for i in 0..l {
            for j in 0..l {
                let seen = i == j || sets.iter().any(|s| s.contains(&(i as u32)) && s.contains(&(j as u32)));
                prop_assert_eq!(g.has_edge(i, j), seen, "({}, {})", i, j);
            }
        }
    }

    #[test]
    fn prior_graphs_are_symmetric_with_self_loops(
        l in 1usize..10,
        raw in prop::collection::vec((0usize..10, 0usize..10), 0..30),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().filter(|&(i, j)| i < l && j < l).collect();
        let g = LabelGraph::from_edges(l, &edges).unwrap();
        for i in 0..l {
            prop_assert!(g.has_edge(i, i));
            prop_assert_eq!(g.neighbors(i).len(), (0..l).filter(|&j| g.has_edge(i, j)).count());
            for j in 0..l {
                prop_assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
            }
        }
        for &(i, j) in &edges {
            prop_assert!(g.has_edge(i, j));
        }
        let again = LabelGraph::from_adjacency(l, GraphMode::Prior, g.adjacency().to_vec()).unwrap();
        prop_assert_eq!(&again, &g);
    }

    #[test]
    fn mask_repeats_the_adjacency(l in 1usize..7, b in 1usize..4, raw in prop::collection::vec((0usize..7, 0usize..7), 0..12)) {
        let edges: Vec<(usize, usize)> = raw.into_iter().filter(|&(i, j)| i < l && j < l).collect();
        let g = LabelGraph::from_edges(l, &edges).unwrap();
        let mask = g.mask(b).unwrap();
        prop_assert_eq!(mask.dims(), (b, l, l));
        for item in 0..b {
            for i in 0..l {
                for j in 0..l {
                    prop_assert_eq!(mask.get(item, i, j), g.has_edge(i, j));
                }
            }
        }
    }

    #[test]
    fn input_graph_is_undirected(n in 1usize..12, raw in prop::collection::vec((0usize..12, 0usize..12), 0..20)) {
        let edges: Vec<(usize, usize)> = raw.into_iter().filter(|&(i, j)| i < n && j < n).collect();
        let g = InputGraph::from_edges(n, &edges).unwrap();
        for &(i, j) in &edges {
            prop_assert!(g.connected(i, j) && g.connected(j, i));
        }
        for i in 0..n {
            prop_assert!(g.connected(i, i));
        }
        prop_assert!(g.edges().all(|(i, j)| i < j));
    }
}

#[test]
fn edgeless_and_complete_graphs() {
    let el = LabelGraph::edgeless(4).unwrap();
    assert_eq!(el.num_edges(), 0);
    assert!(el.mask(2).is_none());
    let fc = LabelGraph::fully_connected(4).unwrap();
    assert_eq!(fc.num_edges(), 16);
    assert!(fc.mask(2).unwrap().data().iter().all(|&m| m));
}

#[test]
fn invalid_graphs_are_rejected() {
    assert!(LabelGraph::from_edges(3, &[(0, 3)]).is_err());
    assert!(LabelGraph::cooccurrence(&[vec![0u32, 5]], 3).is_err());
    // missing self-loop
    assert!(LabelGraph::from_adjacency(2, GraphMode::Prior, vec![false, true, true, true]).is_err());
    // asymmetric
    assert!(LabelGraph::from_adjacency(2, GraphMode::Prior, vec![true, true, false, true]).is_err());
    assert!(LabelGraph::from_adjacency(2, GraphMode::FullyConnected, vec![true, true, false, true]).is_err());
    assert!(InputGraph::from_edges(2, &[(1, 2)]).is_err());
}

#[test]
fn cooccurrence_example() {
    let sets: Vec<Vec<u32>> = vec![vec![0, 1], vec![1, 2], vec![3]];
    let g = LabelGraph::cooccurrence(&sets, 4).unwrap();
    assert_eq!(g.neighbors(1), [0, 1, 2]);
    assert_eq!(g.neighbors(3), [3]);
    assert!(!g.has_edge(0, 2));
}
