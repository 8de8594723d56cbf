use std::collections::{BTreeMap, BTreeSet};

use imold_core::graph::{Dataset, Graph, Label, ShiftKind, Split, TaskKind};
use imold_core::synth::{builtin, contains_induced, generate, label_matches_motif, SynthSpec};

fn small(seed: u64) -> SynthSpec {
    SynthSpec { n_train: 200, n_val: 60, n_test: 60, seed, ..SynthSpec::default() }
}

fn label(g: &Graph) -> usize {
    match g.label {
        Label::Scalar(y) => y as usize,
        _ => unreachable!(),
    }
}

/// Alignment group of a training environment: its index parity in the pool.
fn aligned(spec: &SynthSpec, g: &Graph) -> bool {
    let names: Vec<String> = spec
        .spurious_motifs
        .train
        .iter()
        .map(|m| m.resolve().unwrap().name)
        .collect();
    let idx = names.iter().position(|n| Some(n) == g.env.as_ref()).unwrap();
    idx % 2 == label(g)
}

#[test]
fn perfect_correlation_makes_environment_predict_label() {
    let spec = SynthSpec { train_correlation: 1.0, ..small(3) };
    let (graphs, split) = generate(&spec).unwrap();
    let train: BTreeSet<&String> = split.train.iter().collect();
    let mut env_labels: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for g in graphs.iter().filter(|g| train.contains(&g.id)) {
        assert!(aligned(&spec, g));
        env_labels.entry(g.env.clone().unwrap()).or_default().insert(label(g));
    }
    assert_eq!(env_labels.len(), 2);
    assert!(env_labels.values().all(|ls| ls.len() == 1));
}

#[test]
fn train_alignment_rate_matches_correlation() {
    let spec = SynthSpec { n_val: 0, n_test: 0, ..SynthSpec::default() };
    let (graphs, _) = generate(&spec).unwrap();
    assert_eq!(graphs.len(), 1000);
    let rate = graphs.iter().filter(|g| aligned(&spec, g)).count() as f64 / 1000.0;
    assert!((0.87..=0.93).contains(&rate), "aligned fraction {rate}");
}

#[test]
fn every_label_is_carried_by_its_planted_motif() {
    for seed in 0..3 {
        let spec = small(seed);
        let (graphs, _) = generate(&spec).unwrap();
        for g in &graphs {
            assert!(label_matches_motif(&spec, g).unwrap(), "{}", g.id);
        }
    }
}

#[test]
fn generated_data_forms_a_valid_dataset() {
    let (graphs, split) = generate(&small(1)).unwrap();
    let ds = Dataset::new(graphs, split, TaskKind::Binary).unwrap();
    assert_eq!(ds.subset(Split::Train).len(), 200);
    assert_eq!(ds.subset(Split::Val).len(), 60);
    assert!(ds.node_type_count() <= 8);
    for g in &ds.graphs {
        assert!((10 + 5..=20 + 12).contains(&g.num_nodes), "{} has {}", g.id, g.num_nodes);
    }
}

#[test]
fn same_seed_same_dataset() {
    assert_eq!(generate(&small(9)).unwrap(), generate(&small(9)).unwrap());
    assert_ne!(generate(&small(9)).unwrap().0, generate(&small(10)).unwrap().0);
}

#[test]
fn covariate_shift_uses_unseen_environments() {
    let (graphs, split) = generate(&small(2)).unwrap();
    let envs = |s: Split| -> BTreeSet<String> {
        let ids: BTreeSet<&String> = split.ids(s).iter().collect();
        graphs.iter().filter(|g| ids.contains(&g.id)).map(|g| g.env.clone().unwrap()).collect()
    };
    let (train, val, test) = (envs(Split::Train), envs(Split::Val), envs(Split::Test));
    assert!(train.is_disjoint(&test));
    assert!(train.is_disjoint(&val));
    assert_eq!(test.len(), 2);
}

#[test]
fn concept_shift_reverses_the_correlation_in_test() {
    let spec = SynthSpec {
        n_train: 0,
        n_val: 0,
        n_test: 600,
        shift_kind: ShiftKind::Concept,
        spurious_motifs: imold_core::synth::SpuriousPools {
            test: SynthSpec::default().spurious_motifs.train.clone(),
            ..SynthSpec::default().spurious_motifs
        },
        ..SynthSpec::default()
    };
    let (graphs, _) = generate(&spec).unwrap();
    let rate = graphs.iter().filter(|g| aligned(&spec, g)).count() as f64 / 600.0;
    assert!(rate < 0.2, "aligned fraction in test {rate}");
}

#[test]
fn induced_search_distinguishes_motifs() {
    let house = builtin("house").unwrap();
    let c5 = builtin("cycle5").unwrap();
    assert!(contains_induced(house.num_nodes, &house.edges, &house));
    assert!(!contains_induced(house.num_nodes, &house.edges, &c5));
    assert!(contains_induced(c5.num_nodes, &c5.edges, &c5));
    assert!(!contains_induced(c5.num_nodes, &c5.edges, &house));
    // a 5-cycle with a chord is no longer an induced 5-cycle
    let mut chord = c5.edges.clone();
    chord.push((0, 2));
    assert!(!contains_induced(5, &chord, &c5));
}

#[test]
fn unknown_fields_are_rejected() {
    let mut v = serde_json::to_value(SynthSpec::default()).unwrap();
    v["bogus"] = serde_json::json!(1);
    assert!(serde_json::from_value::<SynthSpec>(v).is_err());
}
