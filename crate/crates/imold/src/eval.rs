//! Frozen-state evaluation and embedding export from checkpoints.

use std::path::Path;

use imold_core::graph::{Dataset, Split, TaskKind};
use imold_core::metrics::EvalReport;
use imold_core::train::{predict, score_predictions, MetricKind};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

/// Inference batch size; results do not depend on it.
const EVAL_BATCH: usize = 256;

fn check_compatible(ck: &Checkpoint, ds: &Dataset, path: &Path) -> Result<()> {
    let cfg = &ck.state.config;
    if cfg.task != ds.task {
        return Err(Error::checkpoint(
            path,
            format!("trained for task {:?}, dataset is {:?}", cfg.task, ds.task),
        ));
    }
    if ds.node_type_count() > cfg.gin.node_type_count {
        return Err(Error::checkpoint(
            path,
            format!(
                "dataset uses {} node types, model embeds {}",
                ds.node_type_count(),
                cfg.gin.node_type_count
            ),
        ));
    }
    Ok(())
}

/// The checkpoint's selection metric on one split, followed by accuracy
/// for binary tasks when that is not already the selection metric.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    ds: &Dataset,
    split: Split,
    path: &Path,
) -> Result<Vec<EvalReport>> {
    check_compatible(ck, ds, path)?;
    let graphs = ds.subset(split);
    let p = predict(&ck.state, &ck.config.objective(), &graphs, EVAL_BATCH)?;
    let primary = ck.config.metric.unwrap_or(MetricKind::for_task(ds.task));
    let mut reports = vec![score_predictions(&p, primary)?];
    if ds.task == TaskKind::Binary && primary != MetricKind::Accuracy {
        reports.push(score_predictions(&p, MetricKind::Accuracy)?);
    }
    Ok(reports)
}

#[derive(Serialize)]
struct EmbeddingLine<'a> {
    id: &'a str,
    split: &'a str,
    env: Option<&'a str>,
    z_inv: &'a [f64],
    z_spu: &'a [f64],
    /// `readout(H′)`; equals `z_inv + z_spu`.
    z: &'a [f64],
}

/// One JSON line per graph, in dataset order.
pub fn export_embeddings(ck: &Checkpoint, ds: &Dataset, path: &Path) -> Result<String> {
    check_compatible(ck, ds, path)?;
    let p = predict(&ck.state, &ck.config.objective(), &ds.graphs, EVAL_BATCH)?;
    let mut out = String::new();
    for (i, g) in ds.graphs.iter().enumerate() {
        let line = EmbeddingLine {
            id: &g.id,
            split: ds.split_of(i).name(),
            env: g.env.as_deref(),
            z_inv: p.z_inv.row(i),
            z_spu: p.z_spu.row(i),
            z: p.z.row(i),
        };
        out.push_str(&serde_json::to_string(&line).expect("embeddings always serialize"));
        out.push('\n');
    }
    Ok(out)
}
