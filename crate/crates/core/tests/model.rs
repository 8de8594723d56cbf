mod common;

use imold_core::autodiff::Tape;
use imold_core::gnn::{readout, GinConfig};
use imold_core::graph::TaskKind;
use imold_core::model::{
    separate, total_loss, Ablation, LossBreakdown, Mode, ModelConfig, ModelState, Objective,
};
use imold_core::params::Binder;
use imold_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ModelConfig {
    ModelConfig {
        gin: GinConfig::new(4, 8, 2),
        codebook_size: 12,
        decay: 0.99,
        task: TaskKind::Binary,
    }
}

fn state_for(graphs: &[imold_core::graph::Graph], seed: u64) -> ModelState {
    let mut state = ModelState::init(config(), seed).unwrap();
    state.initialize_codebook(&common::batch(graphs)).unwrap();
    state
}

fn losses(state: &ModelState, graphs: &[imold_core::graph::Graph], obj: &Objective) -> (LossBreakdown, Tensor, Tensor) {
    let tape = Tape::new();
    let vars = state.bind(&mut Binder::frozen(&tape));
    let out = total_loss(&vars, &state.codebook, &common::batch(graphs), obj, TaskKind::Binary, 11)
        .unwrap();
    let zi = (*out.forward.z_inv.value()).clone();
    let zs = (*out.forward.z_spu.value()).clone();
    (out.breakdown, zi, zs)
}

#[test]
fn separation_and_readout_are_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..20 {
        let graphs = common::random_graphs(&mut rng, 4, 8, 4);
        let state = state_for(&graphs, trial);
        let tape = Tape::new();
        let vars = state.bind(&mut Binder::frozen(&tape));
        let batch = common::batch(&graphs);
        let out = total_loss(&vars, &state.codebook, &batch, &common::imold_objective(), TaskKind::Binary, 0)
            .unwrap();
        let f = &out.forward;
        let (h_inv, h_spu) = separate(f.h_prime, f.scores.unwrap()).unwrap();
        for ((a, b), c) in h_inv.value().data().iter().zip(h_spu.value().data()).zip(f.h_prime.value().data()) {
            assert_eq!(a + b, *c);
        }
        let z = readout(f.h_prime, &batch.segment_offsets).unwrap();
        for ((a, b), c) in f.z_inv.value().data().iter().zip(f.z_spu.value().data()).zip(z.value().data()) {
            assert!((a + b - c).abs() < 1e-12);
        }
    }
}

#[test]
fn total_is_weighted_sum_of_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..20 {
        let graphs = common::random_graphs(&mut rng, 5, 8, 4);
        let state = state_for(&graphs, trial);
        let obj = Objective {
            lambda_inv: rng.gen_range(0.0..1.0),
            lambda_reg: rng.gen_range(0.0..1.0),
            lambda_cmt: rng.gen_range(0.0..1.0),
            ..common::imold_objective()
        };
        let (b, _, _) = losses(&state, &graphs, &obj);
        let expect = b.pred + obj.lambda_inv * b.inv + obj.lambda_reg * b.reg + obj.lambda_cmt * b.cmt;
        assert!((b.total - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        assert!(b.inv >= -5.0 && b.inv <= 5.0);
        assert!(b.reg >= 0.0 && b.reg <= 0.7);
        assert!(b.cmt >= 0.0);

        let paper_row = Objective { lambda_inv: 0.01, lambda_reg: 0.5, lambda_cmt: 0.1, ..obj };
        let (b, _, _) = losses(&state, &graphs, &paper_row);
        let expect = b.pred + 0.01 * b.inv + 0.5 * b.reg + 0.1 * b.cmt;
        assert!((b.total - expect).abs() <= 1e-12 * expect.abs().max(1.0));

        let zeroed = Objective { lambda_inv: 0.0, lambda_reg: 0.0, lambda_cmt: 0.0, ..obj };
        let (b, _, _) = losses(&state, &graphs, &zeroed);
        assert_eq!(b.total, b.pred);
    }
}

#[test]
fn erm_modes_have_only_the_prediction_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let graphs = common::random_graphs(&mut rng, 6, 8, 4);
    let state = state_for(&graphs, 0);
    for mode in [Mode::Erm, Mode::ErmRvq] {
        let obj = Objective { mode, ..common::imold_objective() };
        let (b, _, zs) = losses(&state, &graphs, &obj);
        assert_eq!((b.inv, b.reg), (0.0, 0.0));
        match mode {
            Mode::Erm => {
                assert_eq!(b.cmt, 0.0);
                assert_eq!(b.total, b.pred);
            }
            _ => assert!((b.total - (b.pred + obj.lambda_cmt * b.cmt)).abs() < 1e-12),
        }
        assert!(zs.data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn ablation_switches_zero_their_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let graphs = common::random_graphs(&mut rng, 6, 8, 4);
    let state = state_for(&graphs, 0);
    let base = common::imold_objective();
    let cases = [
        (Ablation { no_inv: true, ..Default::default() }, 0),
        (Ablation { no_reg: true, ..Default::default() }, 1),
        (Ablation { no_cmt: true, ..Default::default() }, 2),
        (Ablation { no_vq: true, ..Default::default() }, 2),
    ];
    for (ablation, zeroed) in cases {
        let obj = Objective { ablation, ..base };
        let (b, _, _) = losses(&state, &graphs, &obj);
        let w = obj.effective_weights();
        let parts = [(b.inv, w.0), (b.reg, w.1), (b.cmt, w.2)];
        assert_eq!(parts[zeroed].1, 0.0, "{ablation:?}");
        let expect = b.pred + parts.iter().map(|(v, w)| v * w).sum::<f64>();
        assert!((b.total - expect).abs() < 1e-12);
    }
}

#[test]
fn node_relabelling_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let obj = common::imold_objective();
    for trial in 0..100 {
        let graphs = common::random_graphs(&mut rng, 4, 8, 4);
        let state = state_for(&graphs, trial);
        let moved = common::shuffled(&mut rng, &graphs);
        let (b0, zi0, zs0) = losses(&state, &graphs, &obj);
        let (b1, zi1, zs1) = losses(&state, &moved, &obj);
        for (x, y) in zi0.data().iter().chain(zs0.data()).zip(zi1.data().iter().chain(zs1.data())) {
            assert!((x - y).abs() <= 1e-9, "trial {trial}");
        }
        for (x, y) in [(b0.pred, b1.pred), (b0.inv, b1.inv), (b0.reg, b1.reg), (b0.cmt, b1.cmt), (b0.total, b1.total)] {
            assert!((x - y).abs() <= 1e-9, "trial {trial}: {b0:?} vs {b1:?}");
        }
    }
}

#[test]
fn same_seed_same_breakdown() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let graphs = common::random_graphs(&mut rng, 5, 8, 4);
    let a = losses(&state_for(&graphs, 42), &graphs, &common::imold_objective());
    let b = losses(&state_for(&graphs, 42), &graphs, &common::imold_objective());
    assert_eq!(a, b);
    let c = losses(&state_for(&graphs, 43), &graphs, &common::imold_objective());
    assert_ne!(a.0, c.0);
}
