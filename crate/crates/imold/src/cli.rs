//! Command-line surface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use imold_core::graph::Split;
use imold_core::synth::{self, SynthSpec};
use imold_core::train::RunConfig;
use imold_core::verify;
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_checkpoint, export_embeddings};
use crate::io::{self, graphs_to_string, load_dataset, read_json, resolve_relative, write_text};
use crate::runner::run_experiment;

#[derive(Debug, Parser)]
#[command(name = "imold", version, about = "Invariant molecular representations with residual vector quantization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic motif dataset as JSONL.
    GenData {
        /// JSON spec; omitted fields take their defaults.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every seed of a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for result.json, run.log and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Dataset file; overrides the config's `dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_split)]
        split: Split,
    },
    /// Write z_inv, z_spu and z for every graph as JSONL.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        /// Also check the full model objective on a toy model.
        #[arg(long)]
        full: bool,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?} (train, val or test)"))
}

/// Reads a synthetic spec, filling omitted fields from the defaults.
pub fn read_spec(path: &Path) -> Result<SynthSpec> {
    let user: Value = read_json(path)?;
    let mut merged = serde_json::to_value(SynthSpec::default()).expect("spec serializes");
    match (&mut merged, user) {
        (Value::Object(base), Value::Object(over)) => base.extend(over),
        _ => {
            return Err(Error::Json {
                path: path.to_path_buf(),
                message: "spec must be a JSON object".into(),
            })
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Runs a command, writing human output to `out`. Returns the exit code
/// for outcomes that are not errors (gradient check failures).
pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    let emit = |out: &mut dyn Write, text: &str| {
        let _ = writeln!(out, "{text}");
    };
    match command {
        Command::GenData { spec, out: target } => {
            let spec = read_spec(&spec)?;
            let (graphs, split) = synth::generate(&spec)?;
            let index: std::collections::HashMap<&str, Split> = Split::ALL
                .iter()
                .flat_map(|&s| split.ids(s).iter().map(move |id| (id.as_str(), s)))
                .collect();
            write_text(&target, &graphs_to_string(&graphs, |i| index[graphs[i].id.as_str()]))?;
            emit(out, &format!("wrote {} graphs to {}", graphs.len(), target.display()));
        }
        Command::Train { config, out: dir, data } => {
            let cfg: RunConfig = read_json(&config)?;
            let data_path = match (data, &cfg.dataset) {
                (Some(p), _) => p,
                (None, Some(d)) => resolve_relative(&config, d),
                (None, None) => {
                    return Err(imold_core::Error::Config(
                        "no dataset: set `dataset` in the config or pass --data".into(),
                    )
                    .into())
                }
            };
            let ds = load_dataset(&data_path, cfg.task)?;
            let result = run_experiment(&cfg, &ds, &dir)?;
            emit(
                out,
                &format!(
                    "{} over {} seeds: test {:.4} ± {:.4} (val {:.4} ± {:.4}, train {:.4} ± {:.4})",
                    result.metric.name(),
                    result.seeds.len(),
                    result.test.mean,
                    result.test.std,
                    result.best_val.mean,
                    result.best_val.std,
                    result.train.mean,
                    result.train.std
                ),
            );
        }
        Command::Eval { checkpoint, data, split } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_dataset(&data, Some(ck.state.config.task))?;
            let reports = evaluate_checkpoint(&ck, &ds, split, &checkpoint)?;
            emit(out, &serde_json::to_string_pretty(&reports).expect("reports serialize"));
        }
        Command::Export { checkpoint, data, out: target } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_dataset(&data, Some(ck.state.config.task))?;
            let text = export_embeddings(&ck, &ds, &checkpoint)?;
            io::write_text(&target, &text)?;
            emit(out, &format!("wrote {} embeddings to {}", ds.graphs.len(), target.display()));
        }
        Command::Gradcheck { full } => {
            let mut outcomes = verify::primitive_suite(0)?;
            if full {
                outcomes.push(verify::toy_model_check(0)?);
            }
            let mut all = true;
            for o in &outcomes {
                all &= o.passed;
                emit(
                    out,
                    &format!(
                        "{:<5} {:<30} max rel error {:.3e} (tolerance {:.0e}, {} coordinates)",
                        if o.passed { "ok" } else { "FAIL" },
                        o.name,
                        o.max_rel_error,
                        o.tolerance,
                        o.coordinates
                    ),
                );
            }
            return Ok(if all { 0 } else { 2 });
        }
    }
    Ok(0)
}
