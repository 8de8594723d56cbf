#![allow(dead_code)]

use imold_core::graph::{Graph, GraphBatch, Label};
use imold_core::model::{Ablation, Mode, Objective};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random simple graph with `1..=max_nodes` nodes and edge density ~0.4.
pub fn random_graph<R: Rng>(rng: &mut R, id: usize, max_nodes: usize, types: usize) -> Graph {
    let n = rng.gen_range(1..=max_nodes);
    let mut edges = Vec::new();
    for v in 1..n {
        for u in 0..v {
            if rng.gen_bool(0.4) {
                edges.push((u, v));
            }
        }
    }
    Graph {
        id: format!("g{id}"),
        num_nodes: n,
        node_types: (0..n).map(|_| rng.gen_range(0..types)).collect(),
        edges,
        label: Label::Scalar(rng.gen_range(0..2) as f64),
        env: None,
    }
}

pub fn random_graphs<R: Rng>(rng: &mut R, count: usize, max_nodes: usize, types: usize) -> Vec<Graph> {
    (0..count).map(|i| random_graph(rng, i, max_nodes, types)).collect()
}

/// Same graphs with every node order shuffled.
pub fn shuffled<R: Rng>(rng: &mut R, graphs: &[Graph]) -> Vec<Graph> {
    graphs
        .iter()
        .map(|g| {
            let mut perm: Vec<usize> = (0..g.num_nodes).collect();
            perm.shuffle(rng);
            g.relabeled(&perm)
        })
        .collect()
}

pub fn batch(graphs: &[Graph]) -> GraphBatch {
    let refs: Vec<&Graph> = graphs.iter().collect();
    GraphBatch::from_graphs(&refs, (0..graphs.len()).collect(), 1).unwrap()
}

pub fn imold_objective() -> Objective {
    Objective {
        mode: Mode::Imold,
        ablation: Ablation::default(),
        lambda_inv: 0.01,
        lambda_reg: 0.5,
        lambda_cmt: 0.1,
        gamma: 0.7,
    }
}
