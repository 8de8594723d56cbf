use imold_core::graph::{Dataset, Split, TaskKind};
use imold_core::model::Mode;
use imold_core::synth::{generate, SynthSpec};
use imold_core::train::{evaluate, mean_std, train, MetricKind, RunConfig, TrainData};

fn dataset() -> Dataset {
    let spec = SynthSpec { n_train: 48, n_val: 16, n_test: 16, seed: 4, ..SynthSpec::default() };
    let (graphs, split) = generate(&spec).unwrap();
    Dataset::new(graphs, split, TaskKind::Binary).unwrap()
}

fn config(mode: Mode) -> RunConfig {
    RunConfig {
        hidden_dim: 8,
        num_layers: 2,
        codebook_size: 10,
        batch_size: 16,
        max_epochs: 6,
        lr: 0.01,
        mode,
        metric: Some(MetricKind::Accuracy),
        ..RunConfig::default()
    }
}

#[test]
fn runs_are_deterministic_and_select_the_best_validation_epoch() {
    let ds = dataset();
    let (tr, va, te) = (ds.subset(Split::Train), ds.subset(Split::Val), ds.subset(Split::Test));
    let data = TrainData { train: &tr, val: &va, test: &te, task: TaskKind::Binary, node_type_count: 8 };
    for mode in [Mode::Imold, Mode::Erm, Mode::ErmRvq] {
        let cfg = config(mode);
        let a = train(&cfg, &data, 7).unwrap();
        let b = train(&cfg, &data, 7).unwrap();
        assert_eq!(a.result, b.result);
        assert_eq!(a.best_state, b.best_state);

        let r = &a.result;
        assert_eq!(r.curves.len(), 6);
        let best = r.curves.iter().map(|c| c.val_metric).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_val_metric, best);
        let first_best = r.curves.iter().position(|c| c.val_metric == best).unwrap();
        assert_eq!(r.best_epoch, first_best);
        assert_eq!(r.test_metric_at_best_val, r.curves[first_best].test_metric);

        let objective = cfg.objective();
        let re = evaluate(&a.best_state, &objective, &te, 16, MetricKind::Accuracy).unwrap();
        assert_eq!(re.value, r.test_metric_at_best_val);

        let (wi, wr, wc) = objective.effective_weights();
        for c in &r.curves {
            let l = c.loss;
            let expect = l.pred + wi * l.inv + wr * l.reg + wc * l.cmt;
            assert!((l.total - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{l:?}");
        }
    }
}

#[test]
fn bad_configs_are_rejected() {
    let ds = dataset();
    let (tr, va, te) = (ds.subset(Split::Train), ds.subset(Split::Val), ds.subset(Split::Test));
    let data = TrainData { train: &tr, val: &va, test: &te, task: TaskKind::Binary, node_type_count: 8 };
    for cfg in [
        RunConfig { batch_size: 1, ..config(Mode::Imold) },
        RunConfig { gamma: 1.5, ..config(Mode::Imold) },
        RunConfig { decay: 1.0, ..config(Mode::Imold) },
        RunConfig { lambda_inv: -0.1, ..config(Mode::Imold) },
    ] {
        assert!(train(&cfg, &data, 0).is_err(), "{cfg:?}");
    }
}

#[test]
fn mean_and_population_std() {
    assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
}
