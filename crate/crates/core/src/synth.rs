//! Deterministic motif-based OOD graph classification datasets.
//!
//! Every graph is a random tree with two motifs attached by single edges:
//! an invariant motif whose identity is the label, and a spurious motif
//! that names the graph's environment. In training the spurious motif
//! agrees with the label with probability `train_correlation`. Under
//! covariate shift validation and test graphs draw spurious motifs from
//! environments never seen in training; under concept shift they reuse the
//! training environments with the correlation reversed.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DatasetSplit, Graph, Label, ShiftKind, Split};

/// Small connected template graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub name: String,
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// When set, every motif node carries this type; otherwise types are
    /// drawn like base-tree types.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_type: Option<usize>,
}

/// A motif given by builtin name or spelled out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MotifRef {
    Named(String),
    Typed { builtin: String, node_type: usize },
    Custom(Motif),
}

impl MotifRef {
    pub fn resolve(&self) -> Result<Motif> {
        match self {
            MotifRef::Named(n) => builtin(n),
            MotifRef::Typed { builtin: n, node_type } => Ok(Motif {
                node_type: Some(*node_type),
                ..builtin(n)?
            }),
            MotifRef::Custom(m) => Ok(m.clone()),
        }
    }
}

fn cycle(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            (i.min(j), i.max(j))
        })
        .collect()
}

/// Builtin templates: `triangle`, `cycle4`, `cycle5`, `cycle6`, `house`,
/// `diamond`, `k4`, `star`, `bowtie`, `crane`.
pub fn builtin(name: &str) -> Result<Motif> {
    let (n, edges): (usize, Vec<(usize, usize)>) = match name {
        "triangle" => (3, cycle(3)),
        "cycle4" => (4, cycle(4)),
        "cycle5" => (5, cycle(5)),
        "cycle6" => (6, cycle(6)),
        "house" => (5, vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)]),
        "diamond" => (4, vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]),
        "k4" => (4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),
        "star" => (5, vec![(0, 1), (0, 2), (0, 3), (0, 4)]),
        "bowtie" => (5, vec![(0, 1), (1, 2), (0, 2), (0, 3), (3, 4), (0, 4)]),
        "crane" => (5, vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 2), (3, 4)]),
        other => return Err(Error::Spec(format!("unknown builtin motif {other:?}"))),
    };
    Ok(Motif {
        name: name.to_string(),
        num_nodes: n,
        edges,
        node_type: None,
    })
}

/// Spurious motif pools per split. Training motifs alternate label
/// alignment: motif `i` agrees with label `i mod 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpuriousPools {
    pub train: Vec<MotifRef>,
    #[serde(default)]
    pub val: Vec<MotifRef>,
    #[serde(default)]
    pub test: Vec<MotifRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Label 0 and label 1 templates.
    pub invariant_motifs: [MotifRef; 2],
    pub spurious_motifs: SpuriousPools,
    /// Inclusive base-tree size range.
    pub base: (usize, usize),
    /// Probability that a training graph's spurious motif agrees with its
    /// label.
    pub train_correlation: f64,
    pub shift_kind: ShiftKind,
    pub node_type_count: usize,
    /// Half-open range of types for base-tree nodes.
    pub base_types: (usize, usize),
    /// Half-open range of types for motif nodes without a fixed type.
    pub motif_types: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let typed = |b: &str, t| MotifRef::Typed {
            builtin: b.to_string(),
            node_type: t,
        };
        SynthSpec {
            n_train: 1000,
            n_val: 200,
            n_test: 200,
            invariant_motifs: [MotifRef::Named("cycle5".into()), MotifRef::Named("house".into())],
            spurious_motifs: SpuriousPools {
                train: vec![typed("star", 5), typed("k4", 6)],
                val: vec![typed("bowtie", 7), typed("diamond", 7)],
                test: vec![typed("cycle6", 7), typed("crane", 7)],
            },
            base: (10, 20),
            train_correlation: 0.9,
            shift_kind: ShiftKind::Covariate,
            node_type_count: 8,
            base_types: (0, 3),
            motif_types: (3, 5),
            seed: 0,
        }
    }
}

struct Resolved {
    invariant: [Motif; 2],
    train: Vec<Motif>,
    val: Vec<Motif>,
    test: Vec<Motif>,
}

impl SynthSpec {
    fn resolve(&self) -> Result<Resolved> {
        if !(0.0..=1.0).contains(&self.train_correlation) {
            return Err(Error::Spec("train_correlation must lie in [0, 1]".into()));
        }
        let (lo, hi) = self.base;
        if lo == 0 || lo > hi {
            return Err(Error::Spec("base size range must be non-empty and positive".into()));
        }
        for (lo, hi) in [self.base_types, self.motif_types] {
            if lo >= hi || hi > self.node_type_count {
                return Err(Error::Spec("type ranges must be non-empty and inside the alphabet".into()));
            }
        }
        let resolve_all = |v: &[MotifRef]| v.iter().map(MotifRef::resolve).collect::<Result<Vec<_>>>();
        let invariant = [
            self.invariant_motifs[0].resolve()?,
            self.invariant_motifs[1].resolve()?,
        ];
        let train = resolve_all(&self.spurious_motifs.train)?;
        let (val, test) = match self.shift_kind {
            ShiftKind::Covariate => (
                resolve_all(&self.spurious_motifs.val)?,
                resolve_all(&self.spurious_motifs.test)?,
            ),
            ShiftKind::Concept => (train.clone(), train.clone()),
        };
        if train.len() < 2 {
            return Err(Error::Spec("at least two training spurious motifs are needed".into()));
        }
        if (self.n_val > 0 && val.is_empty()) || (self.n_test > 0 && test.is_empty()) {
            return Err(Error::Spec("covariate shift needs val and test spurious motifs".into()));
        }
        let all = invariant.iter().chain(&train).chain(&val).chain(&test);
        for m in all.clone() {
            check_motif(m, self)?;
        }
        if self.shift_kind == ShiftKind::Covariate {
            for m in val.iter().chain(&test) {
                if train.iter().any(|t| t.name == m.name) {
                    return Err(Error::Spec(format!(
                        "spurious motif {} appears in training and held-out environments",
                        m.name
                    )));
                }
            }
        }
        for s in train.iter().chain(&val).chain(&test) {
            for inv in &invariant {
                if contains_induced(s.num_nodes, &s.edges, inv) {
                    return Err(Error::Spec(format!(
                        "spurious motif {} contains invariant motif {}",
                        s.name, inv.name
                    )));
                }
            }
        }
        for (a, b) in [(0, 1), (1, 0)] {
            let m = &invariant[a];
            if contains_induced(m.num_nodes, &m.edges, &invariant[b]) {
                return Err(Error::Spec("invariant motifs must not contain each other".into()));
            }
        }
        Ok(Resolved {
            invariant,
            train,
            val,
            test,
        })
    }
}

fn check_motif(m: &Motif, spec: &SynthSpec) -> Result<()> {
    if m.num_nodes == 0 || m.num_nodes > spec.base.1 {
        return Err(Error::Spec(format!(
            "motif {} has {} nodes; base trees hold at most {}",
            m.name, m.num_nodes, spec.base.1
        )));
    }
    if m.edges.iter().any(|&(u, v)| u >= m.num_nodes || v >= m.num_nodes || u == v) {
        return Err(Error::Spec(format!("motif {} has an invalid edge", m.name)));
    }
    if m.node_type.is_some_and(|t| t >= spec.node_type_count) {
        return Err(Error::Spec(format!("motif {} node type outside the alphabet", m.name)));
    }
    if !connected(m.num_nodes, &m.edges) {
        return Err(Error::Spec(format!("motif {} is not connected", m.name)));
    }
    Ok(())
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for &(u, v) in edges {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    adj
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let adj = adjacency(n, edges);
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Whether `motif` occurs as an induced subgraph of the graph on `n` nodes
/// with the given edges. Exhaustive backtracking; meant for graphs of a
/// few dozen nodes.
pub fn contains_induced(n: usize, edges: &[(usize, usize)], motif: &Motif) -> bool {
    let g = adjacency(n, edges);
    let m = adjacency(motif.num_nodes, &motif.edges);
    let mdeg: Vec<usize> = m.iter().map(|r| r.iter().filter(|&&x| x).count()).collect();
    let gdeg: Vec<usize> = g.iter().map(|r| r.iter().filter(|&&x| x).count()).collect();
    let mut map = Vec::with_capacity(motif.num_nodes);
    let mut used = vec![false; n];
    extend(&g, &gdeg, &m, &mdeg, &mut map, &mut used)
}

fn extend(
    g: &[Vec<bool>],
    gdeg: &[usize],
    m: &[Vec<bool>],
    mdeg: &[usize],
    map: &mut Vec<usize>,
    used: &mut [bool],
) -> bool {
    let next = map.len();
    if next == m.len() {
        return true;
    }
    for cand in 0..g.len() {
        if used[cand] || gdeg[cand] < mdeg[next] {
            continue;
        }
        if map.iter().enumerate().any(|(i, &gi)| m[i][next] != g[gi][cand]) {
            continue;
        }
        used[cand] = true;
        map.push(cand);
        if extend(g, gdeg, m, mdeg, map, used) {
            return true;
        }
        map.pop();
        used[cand] = false;
    }
    false
}

/// Nodes and edges under construction.
struct Builder {
    types: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl Builder {
    fn attach<R: Rng>(&mut self, motif: &Motif, base_nodes: usize, types: (usize, usize), rng: &mut R) {
        let offset = self.types.len();
        for _ in 0..motif.num_nodes {
            let t = motif.node_type.unwrap_or_else(|| rng.gen_range(types.0..types.1));
            self.types.push(t);
        }
        self.edges
            .extend(motif.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        let anchor = rng.gen_range(0..base_nodes);
        let port = offset + rng.gen_range(0..motif.num_nodes);
        self.edges.push((anchor, port));
    }
}

fn random_tree<R: Rng>(n: usize, types: (usize, usize), rng: &mut R) -> Builder {
    let types_v = (0..n).map(|_| rng.gen_range(types.0..types.1)).collect();
    let edges = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    Builder {
        types: types_v,
        edges,
    }
}

const MAX_ATTEMPTS: usize = 1000;

/// Generates the dataset described by `spec`, in split order
/// train, val, test. Identical specs give identical output.
pub fn generate(spec: &SynthSpec) -> Result<(Vec<Graph>, DatasetSplit)> {
    let r = spec.resolve()?;
    let mut graphs = Vec::with_capacity(spec.n_train + spec.n_val + spec.n_test);
    let mut split = DatasetSplit {
        shift_kind: Some(spec.shift_kind),
        ..Default::default()
    };
    let rho = spec.train_correlation;
    let plan: [(Split, usize, &[Motif], Option<f64>); 3] = match spec.shift_kind {
        ShiftKind::Covariate => [
            (Split::Train, spec.n_train, &r.train, Some(rho)),
            (Split::Val, spec.n_val, &r.val, None),
            (Split::Test, spec.n_test, &r.test, None),
        ],
        ShiftKind::Concept => [
            (Split::Train, spec.n_train, &r.train, Some(rho)),
            (Split::Val, spec.n_val, &r.val, Some(0.5)),
            (Split::Test, spec.n_test, &r.test, Some(1.0 - rho)),
        ],
    };
    let mut index = 0u64;
    for (s, count, pool, correlation) in plan {
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index);
            index += 1;
            let id = format!("{}-{:05}", s.name(), i);
            let g = sample_graph(&mut rng, spec, &r, pool, correlation, id.clone())?;
            split.ids_mut(s).push(id);
            graphs.push(g);
        }
    }
    Ok((graphs, split))
}

fn sample_graph(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    r: &Resolved,
    pool: &[Motif],
    correlation: Option<f64>,
    id: String,
) -> Result<Graph> {
    let label = rng.gen_range(0..2usize);
    let spurious = match correlation {
        Some(rho) => {
            let agree = rng.gen_bool(rho);
            let group = if agree { label } else { 1 - label };
            let members: Vec<&Motif> = pool
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 2 == group)
                .map(|(_, m)| m)
                .collect();
            *members.choose(rng).expect("pool has both alignment groups")
        }
        None => pool.choose(rng).expect("pool is non-empty"),
    };
    let (lo, hi) = spec.base;
    for _ in 0..MAX_ATTEMPTS {
        let n_base = rng.gen_range(lo..=hi);
        let mut b = random_tree(n_base, spec.base_types, rng);
        b.attach(&r.invariant[label], n_base, spec.motif_types, rng);
        b.attach(spurious, n_base, spec.motif_types, rng);
        let n = b.types.len();
        let other = &r.invariant[1 - label];
        if contains_induced(n, &b.edges, other) || !contains_induced(n, &b.edges, &r.invariant[label]) {
            continue;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut node_types = vec![0; n];
        for (i, &t) in b.types.iter().enumerate() {
            node_types[perm[i]] = t;
        }
        let mut edges: Vec<(usize, usize)> = b
            .edges
            .iter()
            .map(|&(u, v)| (perm[u].min(perm[v]), perm[u].max(perm[v])))
            .collect();
        edges.sort_unstable();
        return Ok(Graph {
            id,
            num_nodes: n,
            node_types,
            edges,
            label: Label::Scalar(label as f64),
            env: Some(spurious.name.clone()),
        });
    }
    Err(Error::Spec(format!(
        "could not place motifs without a second invariant occurrence after {MAX_ATTEMPTS} tries"
    )))
}

/// Index of the invariant template in `spec` a graph's label refers to, and
/// whether the graph contains exactly that template and not the other.
pub fn label_matches_motif(spec: &SynthSpec, graph: &Graph) -> Result<bool> {
    let r = spec.resolve()?;
    let Label::Scalar(y) = graph.label else {
        return Ok(false);
    };
    let y = y as usize;
    Ok(contains_induced(graph.num_nodes, &graph.edges, &r.invariant[y])
        && !contains_induced(graph.num_nodes, &graph.edges, &r.invariant[1 - y]))
}
