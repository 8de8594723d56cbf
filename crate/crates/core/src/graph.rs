//! Graph data model, dataset splits and mini-batching.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Graph label: one number for binary or regression tasks, or one entry per
/// task (possibly missing) for multi-label tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Scalar(f64),
    Tasks(Vec<Option<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "tasks")]
pub enum TaskKind {
    Binary,
    Multilabel(usize),
    Regression,
}

impl TaskKind {
    /// Number of prediction outputs.
    pub fn arity(self) -> usize {
        match self {
            TaskKind::Multilabel(k) => k,
            _ => 1,
        }
    }

    /// Infers the task from labels: arrays are multi-label, scalars that
    /// are all 0 or 1 are binary, anything else is regression.
    pub fn infer<'a>(labels: impl IntoIterator<Item = &'a Label>) -> Result<TaskKind> {
        let mut kind: Option<Option<usize>> = None;
        let mut all_binary = true;
        for label in labels {
            let this = match label {
                Label::Scalar(v) => {
                    all_binary &= *v == 0.0 || *v == 1.0;
                    None
                }
                Label::Tasks(t) => Some(t.len()),
            };
            match kind {
                None => kind = Some(this),
                Some(k) if k != this => {
                    return Err(Error::Config("mixed label kinds in one dataset".into()))
                }
                Some(_) => {}
            }
        }
        Ok(match kind.ok_or(Error::EmptyDataset)? {
            Some(k) => TaskKind::Multilabel(k),
            None if all_binary => TaskKind::Binary,
            None => TaskKind::Regression,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Covariate,
    Concept,
}

/// Undirected node-typed graph with a label and an optional environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub id: String,
    pub num_nodes: usize,
    pub node_types: Vec<usize>,
    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub edges: Vec<(usize, usize)>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
}

impl Graph {
    /// Checks structural invariants and label arity.
    pub fn validate(&self, task: TaskKind) -> Result<()> {
        let fail = |reason: String| Error::Validation {
            id: self.id.clone(),
            reason,
        };
        if self.num_nodes == 0 {
            return Err(fail("graph has no nodes".into()));
        }
        if self.node_types.len() != self.num_nodes {
            return Err(fail(format!(
                "{} node types for {} nodes",
                self.node_types.len(),
                self.num_nodes
            )));
        }
        let mut seen = BTreeSet::new();
        for &(u, v) in &self.edges {
            if u >= self.num_nodes || v >= self.num_nodes {
                return Err(fail(format!(
                    "edge [{u},{v}] out of range for {} nodes",
                    self.num_nodes
                )));
            }
            if u == v {
                return Err(fail(format!("self-loop on node {u}")));
            }
            if u > v {
                return Err(fail(format!("edge [{u},{v}] must be stored with u < v")));
            }
            if !seen.insert((u, v)) {
                return Err(fail(format!("duplicate edge [{u},{v}]")));
            }
        }
        match (&self.label, task) {
            (Label::Scalar(v), TaskKind::Binary) if *v == 0.0 || *v == 1.0 => Ok(()),
            (Label::Scalar(v), TaskKind::Regression) if v.is_finite() => Ok(()),
            (Label::Tasks(t), TaskKind::Multilabel(k)) if t.len() == k => {
                if t.iter().flatten().all(|&y| y == 0.0 || y == 1.0) {
                    Ok(())
                } else {
                    Err(fail("multi-label entries must be 0, 1 or null".into()))
                }
            }
            (label, task) => Err(fail(format!("label {label:?} does not fit task {task:?}"))),
        }
    }

    /// Copy with node `i` moved to position `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Graph {
        let mut node_types = vec![0; self.num_nodes];
        for (i, &t) in self.node_types.iter().enumerate() {
            node_types[perm[i]] = t;
        }
        let edges = self
            .edges
            .iter()
            .map(|&(u, v)| {
                let (a, b) = (perm[u], perm[v]);
                (a.min(b), a.max(b))
            })
            .collect();
        Graph {
            node_types,
            edges,
            ..self.clone()
        }
    }

    /// Label as a target row plus an observation mask of width `arity`.
    pub fn target_row(&self, arity: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.label {
            Label::Scalar(v) => (vec![*v; arity], vec![1.0; arity]),
            Label::Tasks(t) => t
                .iter()
                .map(|y| match y {
                    Some(v) => (*v, 1.0),
                    None => (0.0, 0.0),
                })
                .unzip(),
        }
    }
}

/// Assignment of graph ids to train, validation and test.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub shift_kind: Option<ShiftKind>,
}

impl DatasetSplit {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn ids_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Validated graphs together with their split and task.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub split: DatasetSplit,
    pub task: TaskKind,
    split_of: Vec<Split>,
}

impl Dataset {
    /// Validates every graph and checks that the split is a partition of
    /// the dataset.
    pub fn new(graphs: Vec<Graph>, split: DatasetSplit, task: TaskKind) -> Result<Dataset> {
        if graphs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut index = BTreeMap::new();
        for (i, g) in graphs.iter().enumerate() {
            g.validate(task)?;
            if index.insert(g.id.as_str(), i).is_some() {
                return Err(Error::Validation {
                    id: g.id.clone(),
                    reason: "duplicate graph id".into(),
                });
            }
        }
        let mut split_of: Vec<Option<Split>> = vec![None; graphs.len()];
        for s in Split::ALL {
            for id in split.ids(s) {
                let &i = index.get(id.as_str()).ok_or_else(|| Error::Validation {
                    id: id.clone(),
                    reason: "split references an unknown graph".into(),
                })?;
                if split_of[i].replace(s).is_some() {
                    return Err(Error::Validation {
                        id: id.clone(),
                        reason: "graph assigned to more than one split".into(),
                    });
                }
            }
        }
        let split_of = split_of
            .into_iter()
            .zip(&graphs)
            .map(|(s, g)| {
                s.ok_or_else(|| Error::Validation {
                    id: g.id.clone(),
                    reason: "graph is in no split".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            graphs,
            split,
            task,
            split_of,
        })
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.split_of[index]
    }

    /// Graphs of one split, in file order.
    pub fn subset(&self, split: Split) -> Vec<Graph> {
        self.graphs
            .iter()
            .zip(&self.split_of)
            .filter(|(_, &s)| s == split)
            .map(|(g, _)| g.clone())
            .collect()
    }

    /// Largest node type plus one.
    pub fn node_type_count(&self) -> usize {
        self.graphs
            .iter()
            .flat_map(|g| g.node_types.iter().copied())
            .max()
            .map_or(1, |m| m + 1)
    }
}

/// Disjoint union of several graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub node_types: Vec<usize>,
    /// Undirected edges with node indices offset per graph.
    pub edges: Vec<(usize, usize)>,
    /// `B + 1` strictly increasing boundaries, from 0 to the node count.
    pub segment_offsets: Vec<usize>,
    /// `B × K` targets; zero where missing.
    pub targets: Tensor,
    /// `B × K`, 1 where a target is observed.
    pub mask: Tensor,
    /// Position of every member in the slice it was batched from.
    pub members: Vec<usize>,
    messages: Vec<(usize, usize)>,
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[&Graph], members: Vec<usize>, arity: usize) -> Result<Self> {
        if graphs.is_empty() {
            return Err(contract("empty batch"));
        }
        let mut node_types = Vec::new();
        let mut edges = Vec::new();
        let mut segment_offsets = vec![0];
        let mut targets = Vec::with_capacity(graphs.len() * arity);
        let mut mask = Vec::with_capacity(graphs.len() * arity);
        for g in graphs {
            if g.num_nodes == 0 {
                return Err(contract(format!("graph {} has no nodes", g.id)));
            }
            let base = node_types.len();
            node_types.extend_from_slice(&g.node_types);
            edges.extend(g.edges.iter().map(|&(u, v)| (u + base, v + base)));
            segment_offsets.push(node_types.len());
            let (t, m) = g.target_row(arity);
            if t.len() != arity {
                return Err(contract(format!("graph {} label arity differs from task", g.id)));
            }
            targets.extend(t);
            mask.extend(m);
        }
        let b = graphs.len();
        let messages = edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        Ok(GraphBatch {
            node_types,
            edges,
            segment_offsets,
            targets: Tensor::matrix(b, arity, targets)?,
            mask: Tensor::matrix(b, arity, mask)?,
            members,
            messages,
        })
    }

    pub fn len(&self) -> usize {
        self.segment_offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_nodes(&self) -> usize {
        self.node_types.len()
    }

    /// Every undirected edge in both directions, as `(source, target)`.
    pub fn messages(&self) -> &[(usize, usize)] {
        &self.messages
    }

    /// Splits the batch back into per-graph `(node_types, edges)`.
    pub fn unbatch(&self) -> Vec<(Vec<usize>, Vec<(usize, usize)>)> {
        let mut out: Vec<(Vec<usize>, Vec<(usize, usize)>)> = self
            .segment_offsets
            .windows(2)
            .map(|w| (self.node_types[w[0]..w[1]].to_vec(), Vec::new()))
            .collect();
        for &(u, v) in &self.edges {
            let g = self.segment_offsets.partition_point(|&o| o <= u) - 1;
            let base = self.segment_offsets[g];
            out[g].1.push((u - base, v - base));
        }
        out
    }
}

/// Shuffles `graphs` with a seeded RNG and cuts them into batches of at
/// most `batch_size`; the last batch may be smaller.
pub fn make_batches(
    graphs: &[Graph],
    batch_size: usize,
    seed: u64,
    arity: usize,
) -> Result<Vec<GraphBatch>> {
    if batch_size < 2 {
        return Err(contract("batch size must be at least 2"));
    }
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    batches_in_order(graphs, &order, batch_size, arity)
}

/// Batches in the given order, without shuffling.
pub fn batches_in_order(
    graphs: &[Graph],
    order: &[usize],
    batch_size: usize,
    arity: usize,
) -> Result<Vec<GraphBatch>> {
    if batch_size == 0 {
        return Err(contract("batch size must be positive"));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&Graph> = chunk.iter().map(|&i| &graphs[i]).collect();
            GraphBatch::from_graphs(&refs, chunk.to_vec(), arity)
        })
        .collect()
}

/// Training batches: like [`make_batches`] but without batches of one
/// graph, which cannot be shuffled against anything.
pub fn training_batches(
    graphs: &[Graph],
    batch_size: usize,
    seed: u64,
    arity: usize,
) -> Result<Vec<GraphBatch>> {
    let mut batches = make_batches(graphs, batch_size, seed, arity)?;
    batches.retain(|b| b.len() >= 2);
    Ok(batches)
}
