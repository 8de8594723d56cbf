mod common;

use imold_core::autodiff::Tape;
use imold_core::gnn::{encode, readout, score, GinConfig, GinParams};
use imold_core::params::Binder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn encode_and_score_are_equivariant_and_readout_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = GinParams::init(GinConfig::new(4, 6, 3), &mut rng).unwrap();
    for trial in 0..30 {
        let g = common::random_graph(&mut rng, trial, 9, 4);
        let mut perm: Vec<usize> = (0..g.num_nodes).collect();
        perm.shuffle(&mut rng);
        let h = g.relabeled(&perm);
        let tape = Tape::new();
        let vars = params.bind(&mut Binder::frozen(&tape));
        let (b0, b1) = (common::batch(&[g.clone()]), common::batch(&[h]));
        let (e0, e1) = (encode(&vars, &b0).unwrap(), encode(&vars, &b1).unwrap());
        let (s0, s1) = (score(&vars, &b0).unwrap(), score(&vars, &b1).unwrap());
        assert_eq!(e0.shape(), vec![g.num_nodes, 6]);
        for v in 0..g.num_nodes {
            for j in 0..6 {
                assert!((e0.value().get(v, j) - e1.value().get(perm[v], j)).abs() < 1e-12);
                let s = s0.value().get(v, j);
                assert!(s > 0.0 && s < 1.0);
                assert!((s - s1.value().get(perm[v], j)).abs() < 1e-12);
            }
        }
        let z0 = readout(e0, &b0.segment_offsets).unwrap();
        let z1 = readout(e1, &b1.segment_offsets).unwrap();
        assert_eq!(z0.shape(), vec![1, 6]);
        for (a, b) in z0.value().data().iter().zip(z1.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_graphs_give_identical_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = GinParams::init(GinConfig::new(3, 4, 2), &mut rng).unwrap();
    let g = common::random_graph(&mut rng, 0, 6, 3);
    let batch = common::batch(&[g.clone(), g.clone(), g]);
    let tape = Tape::new();
    let vars = params.bind(&mut Binder::frozen(&tape));
    let z = readout(encode(&vars, &batch).unwrap(), &batch.segment_offsets).unwrap();
    let z = z.value();
    assert_eq!(z.shape(), &[3, 4]);
    assert_eq!(z.row(0), z.row(1));
    assert_eq!(z.row(1), z.row(2));
}
