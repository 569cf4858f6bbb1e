mod common;

use common::*;
use pico_core::graph::{enumerate_ending_pieces, is_ending_piece, topological_order, width};
use pico_core::vertex_set::VertexSet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ending_pieces_match_exhaustive_search(seed in any::<u64>(), n in 3usize..=12, d in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_dag(&mut rng, n, 0.35);
        prop_assume!(g.len() <= 12);
        let all = g.all();
        let none = VertexSet::new();
        let got = enumerate_ending_pieces(&all, &g, &none, d);
        prop_assert_eq!(&got, &brute_ending_pieces(&g, &all, &none, d));

        // One step deeper, with the forced set of the first removal.
        let first = &got[rng.gen_range(0..got.len())];
        let rest = all.difference(first);
        if !rest.is_empty() {
            let forced = forced_after(&g, &rest, first);
            let got = enumerate_ending_pieces(&rest, &g, &forced, d);
            prop_assert_eq!(got, brute_ending_pieces(&g, &rest, &forced, d));
        }
    }

    #[test]
    fn ending_pieces_compose(seed in any::<u64>(), n in 3usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_dag(&mut rng, n, 0.35);
        let all = g.all();
        let none = VertexSet::new();
        let firsts = enumerate_ending_pieces(&all, &g, &none, 5);
        let m1 = &firsts[rng.gen_range(0..firsts.len())];
        let rest = all.difference(m1);
        prop_assume!(!rest.is_empty());
        for m2 in enumerate_ending_pieces(&rest, &g, &none, 5) {
            prop_assert!(is_ending_piece(&m1.union(&m2), &all, &g));
        }
    }

    #[test]
    fn topological_order_respects_edges(seed in any::<u64>(), n in 2usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_dag(&mut rng, n, 0.2);
        let order = topological_order(&g);
        let mut ids: Vec<i64> = order.clone();
        ids.sort_unstable();
        let expected: Vec<i64> = (0..g.len()).map(|v| g.id_of(v)).collect();
        prop_assert_eq!(ids, expected);
        let pos = |id: i64| order.iter().position(|&x| x == id).unwrap();
        for v in 0..g.len() {
            for &w in g.succs(v) {
                prop_assert!(pos(g.id_of(v)) < pos(g.id_of(w)));
            }
        }
    }

    #[test]
    fn chains_have_width_one(seed in any::<u64>(), n in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_chain_model(&mut rng, n);
        prop_assert_eq!(width(&g), 1);
    }
}

#[test]
fn fixture_widths() {
    assert_eq!(width(&load_model("vgg16.json")), 1);
    assert_eq!(width(&load_model("yolov2.json")), 1);
    assert_eq!(width(&load_model("resnet_block.json")), 2);
    assert_eq!(width(&load_model("inception_c.json")), 4);
}

#[test]
fn fig8_ending_pieces() {
    let g = load_model("fig8.json");
    // A..H are ids 0..7.
    let set = |ids: &[i64]| -> VertexSet { ids.iter().map(|&i| g.index_of(i).unwrap()).collect() };
    let pieces = enumerate_ending_pieces(&g.all(), &g, &VertexSet::new(), 5);
    for want in [set(&[7]), set(&[6, 7]), set(&[4, 6, 7])] {
        assert!(pieces.contains(&want), "missing {want:?}");
    }
    assert!(!pieces.contains(&set(&[4, 5, 7])));
    assert!(!is_ending_piece(&set(&[4, 5, 7]), &g.all(), &g));
}
