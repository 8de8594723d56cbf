//! Line-delimited JSON datasets: one graph per line with keys `id`,
//! `num_nodes`, `node_types`, `edges`, `label`, optional `env` and `split`.

use std::fs;
use std::path::{Path, PathBuf};

use imold_core::graph::{Dataset, DatasetSplit, Graph, Label, Split, TaskKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    num_nodes: usize,
    node_types: Vec<usize>,
    edges: Vec<[usize; 2]>,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    env: Option<String>,
    split: String,
}

/// Parses JSONL text. `path` only labels error messages. The task is
/// inferred from the labels unless given.
pub fn parse_dataset(text: &str, path: &Path, task: Option<TaskKind>) -> Result<Dataset> {
    let mut graphs = Vec::new();
    let mut split = DatasetSplit::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let s = Split::parse(&r.split)
            .ok_or_else(|| parse_err(format!("unknown split {:?}", r.split)))?;
        split.ids_mut(s).push(r.id.clone());
        graphs.push(Graph {
            id: r.id,
            num_nodes: r.num_nodes,
            node_types: r.node_types,
            edges: r.edges.into_iter().map(|[u, v]| (u, v)).collect(),
            label: r.label,
            env: r.env,
        });
    }
    if graphs.is_empty() {
        return Err(imold_core::Error::EmptyDataset.into());
    }
    let task = match task {
        Some(t) => t,
        None => TaskKind::infer(graphs.iter().map(|g| &g.label))?,
    };
    Ok(Dataset::new(graphs, split, task)?)
}

pub fn load_dataset(path: &Path, task: Option<TaskKind>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path, task)
}

/// JSONL text of a dataset, one line per graph in dataset order.
pub fn dataset_to_string(ds: &Dataset) -> String {
    graphs_to_string(&ds.graphs, |i| ds.split_of(i))
}

/// JSONL text for graphs with an explicit split assignment.
pub fn graphs_to_string(graphs: &[Graph], split_of: impl Fn(usize) -> Split) -> String {
    let mut out = String::new();
    for (i, g) in graphs.iter().enumerate() {
        let r = Record {
            id: g.id.clone(),
            num_nodes: g.num_nodes,
            node_types: g.node_types.clone(),
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            label: g.label.clone(),
            env: g.env.clone(),
            split: split_of(i).name().to_string(),
        };
        out.push_str(&serde_json::to_string(&r).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("values always serialize");
    text.push('\n');
    write_text(path, &text)
}

/// Resolves `target` against the directory holding `base`, unless absolute.
pub fn resolve_relative(base: &Path, target: &str) -> PathBuf {
    let t = Path::new(target);
    if t.is_absolute() {
        return t.to_path_buf();
    }
    base.parent().unwrap_or(Path::new("")).join(t)
}
