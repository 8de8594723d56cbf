//! GIN message passing with mean readout.
//!
//! Each layer computes `h_v ← MLP(h_v + Σ_{u ∈ N(v)} h_u)` (ε = 0) with a
//! ReLU inside the MLP and another between layers. The same architecture
//! backs the encoding network and, followed by a sigmoid, the scoring
//! network; the two never share parameters.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{contract, Error, Result};
use crate::graph::GraphBatch;
use crate::params::{glorot, Binder, Mlp, MlpVars};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GinConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub node_type_count: usize,
    pub mlp_hidden: usize,
}

impl GinConfig {
    pub fn new(node_type_count: usize, hidden_dim: usize, num_layers: usize) -> Self {
        GinConfig {
            num_layers,
            hidden_dim,
            node_type_count,
            mlp_hidden: hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("GIN layers and widths must be positive".into()));
        }
        if self.node_type_count == 0 {
            return Err(Error::Config("node type count must be positive".into()));
        }
        Ok(())
    }
}

/// Node-type embedding table plus one MLP per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GinParams {
    pub config: GinConfig,
    pub embedding: Tensor,
    pub layers: Vec<Mlp>,
}

pub struct GinVars<'t> {
    embedding: Var<'t>,
    layers: Vec<MlpVars<'t>>,
    node_type_count: usize,
}

impl GinParams {
    pub fn init<R: Rng + ?Sized>(config: GinConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let embedding = glorot(rng, config.node_type_count, d);
        let layers = (0..config.num_layers)
            .map(|_| Mlp::init(rng, d, config.mlp_hidden, d))
            .collect();
        Ok(GinParams {
            config,
            embedding,
            layers,
        })
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> GinVars<'t> {
        GinVars {
            embedding: b.bind(&self.embedding),
            layers: self.layers.iter().map(|l| l.bind(b)).collect(),
            node_type_count: self.config.node_type_count,
        }
    }

    /// Parameter tensors in binding order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = alloc::vec![&mut self.embedding];
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = alloc::vec![&self.embedding];
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v
    }

    /// Checks tensor shapes against the config.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let ok = self.embedding.shape() == [c.node_type_count, c.hidden_dim]
            && self.layers.len() == c.num_layers
            && self.layers.iter().all(|l| {
                l.hidden.weight.shape() == [c.hidden_dim, c.mlp_hidden]
                    && l.hidden.bias.shape() == [c.mlp_hidden]
                    && l.output.weight.shape() == [c.mlp_hidden, c.hidden_dim]
                    && l.output.bias.shape() == [c.hidden_dim]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Config("GIN parameter shapes disagree with config".into()))
        }
    }
}

/// Node representations, `total_nodes × d`.
pub fn encode<'t>(gin: &GinVars<'t>, batch: &GraphBatch) -> Result<Var<'t>> {
    if let Some(&t) = batch.node_types.iter().find(|&&t| t >= gin.node_type_count) {
        return Err(contract(alloc::format!(
            "node type {t} outside the embedding table of {}",
            gin.node_type_count
        )));
    }
    let mut h = gin.embedding.gather_rows(&batch.node_types)?;
    let last = gin.layers.len() - 1;
    for (i, mlp) in gin.layers.iter().enumerate() {
        h = mlp.forward(h.aggregate(batch.messages())?)?;
        if i != last {
            h = h.relu();
        }
    }
    Ok(h)
}

/// Separating scores `σ(GNN(G))`, each entry in (0, 1).
pub fn score<'t>(gin: &GinVars<'t>, batch: &GraphBatch) -> Result<Var<'t>> {
    Ok(encode(gin, batch)?.sigmoid())
}

/// Per-graph mean of node rows, `B × d`.
pub fn readout<'t>(h: Var<'t>, segment_offsets: &[usize]) -> Result<Var<'t>> {
    h.segment_mean(segment_offsets)
}
