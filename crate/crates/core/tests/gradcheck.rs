use imold_core::autodiff::Tape;
use imold_core::model;
use imold_core::params::Binder;
use imold_core::verify::{primitive_suite, toy_model_check, toy_setup};

#[test]
fn every_primitive_matches_finite_differences() {
    for seed in 0..5 {
        for outcome in primitive_suite(seed).unwrap() {
            assert!(outcome.passed, "seed {seed}: {outcome:?}");
        }
    }
}

#[test]
fn toy_model_gradients_match_finite_differences() {
    for seed in 0..5 {
        let outcome = toy_model_check(seed).unwrap();
        assert!(outcome.passed, "seed {seed}: {outcome:?}");
        assert_eq!(outcome.coordinates, toy_parameter_count(seed));
    }
}

fn toy_parameter_count(seed: u64) -> usize {
    let (state, _, _) = toy_setup(seed).unwrap();
    state.tensors().iter().map(|t| t.len()).sum()
}

#[test]
fn frozen_target_surrogate_agrees_with_the_objective_at_the_base_point() {
    let (state, batch, objective) = toy_setup(3).unwrap();
    let task = state.config.task;

    let tape = Tape::new();
    let mut binder = Binder::new(&tape);
    let vars = state.bind(&mut binder);
    let params = binder.vars().to_vec();
    let real = model::total_loss(&vars, &state.codebook, &batch, &objective, task, 7).unwrap();
    let target = (*real.forward.z_inv.value()).clone();
    let frozen = model::total_loss_frozen_target(
        &vars,
        &state.codebook,
        &batch,
        &objective,
        task,
        7,
        &target,
    )
    .unwrap();
    assert_eq!(real.total.item(), frozen.total.item());

    let g_real = real.total.backward().unwrap();
    let g_frozen = frozen.total.backward().unwrap();
    for p in params {
        assert_eq!(g_real.get_or_zeros(p), g_frozen.get_or_zeros(p));
    }
}
