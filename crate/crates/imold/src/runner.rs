//! Multi-seed experiments: train every seed, keep each seed's
//! best-validation state, aggregate mean ± std, and write results,
//! checkpoints and a run log.

use std::fmt::Write as _;
use std::path::Path;
use std::thread;

use imold_core::graph::{Dataset, Split, TaskKind};
use imold_core::metrics::EvalReport;
use imold_core::train::{self, mean_std, MetricKind, RunConfig, SeedResult, TrainData};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::io::{write_json, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let (mean, std) = mean_std(&v);
        Summary { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub task: TaskKind,
    pub metric: MetricKind,
    pub best_val: Summary,
    /// Test metric at each seed's best validation epoch.
    pub test: Summary,
    /// Train metric of the same states.
    pub train: Summary,
    pub seeds: Vec<SeedResult>,
}

/// One finished seed.
pub struct SeedRun {
    pub result: SeedResult,
    /// Best-validation state.
    pub checkpoint: Checkpoint,
    /// Per-epoch lines followed by JSON metric blocks.
    pub log: String,
}

pub fn node_type_count(config: &RunConfig, ds: &Dataset) -> usize {
    config.node_type_count.unwrap_or_else(|| ds.node_type_count())
}

pub fn run_seed(config: &RunConfig, ds: &Dataset, seed: u64) -> Result<SeedRun> {
    let (tr, va, te) = (ds.subset(Split::Train), ds.subset(Split::Val), ds.subset(Split::Test));
    let data = TrainData {
        train: &tr,
        val: &va,
        test: &te,
        task: ds.task,
        node_type_count: node_type_count(config, ds),
    };
    let out = train::train(config, &data, seed)?;
    let r = &out.result;
    let mut log = String::new();
    for c in &r.curves {
        let l = c.loss;
        let _ = writeln!(
            log,
            "seed {seed} epoch {:>3} loss {:.6} (pred {:.6} inv {:.6} reg {:.6} cmt {:.6}) val {:.6} test {:.6}",
            c.epoch, l.total, l.pred, l.inv, l.reg, l.cmt, c.val_metric, c.test_metric
        );
    }
    for (split, value, n) in [
        (Split::Train, r.train_metric_at_best_val, tr.len()),
        (Split::Val, r.best_val_metric, va.len()),
        (Split::Test, r.test_metric_at_best_val, te.len()),
    ] {
        let report = EvalReport {
            metric: r.metric.name().into(),
            value,
            per_task: Vec::new(),
            n_samples: n,
        };
        let block = json!({
            "seed": seed,
            "epoch": r.best_epoch,
            "split": split.name(),
            "report": report,
        });
        let _ = writeln!(log, "{block}");
    }
    Ok(SeedRun {
        checkpoint: Checkpoint::new(config.clone(), seed, r.best_epoch, out.best_state),
        result: out.result,
        log,
    })
}

/// Trains every seed, in parallel when cores are available. Results and
/// logs are ordered by seed position, so output does not depend on
/// scheduling.
pub fn run_seeds(config: &RunConfig, ds: &Dataset) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(config.seeds.len());
    if workers <= 1 {
        return config.seeds.iter().map(|&s| run_seed(config, ds, s)).collect();
    }
    let mut slots: Vec<Option<Result<SeedRun>>> = (0..config.seeds.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..config.seeds.len())
                        .step_by(workers)
                        .map(|i| (i, run_seed(config, ds, config.seeds[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("training worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every seed ran")).collect()
}

pub fn summarize(config: &RunConfig, ds: &Dataset, runs: &[SeedRun]) -> RunResult {
    let seeds: Vec<SeedResult> = runs.iter().map(|r| r.result.clone()).collect();
    RunResult {
        config: config.clone(),
        task: ds.task,
        metric: config.metric.unwrap_or(MetricKind::for_task(ds.task)),
        best_val: Summary::of(seeds.iter().map(|s| s.best_val_metric)),
        test: Summary::of(seeds.iter().map(|s| s.test_metric_at_best_val)),
        train: Summary::of(seeds.iter().map(|s| s.train_metric_at_best_val)),
        seeds,
    }
}

/// Runs the experiment and writes `result.json`, `run.log` and
/// `checkpoints/seed-<n>.json` under `out_dir`.
pub fn run_experiment(config: &RunConfig, ds: &Dataset, out_dir: &Path) -> Result<RunResult> {
    let runs = run_seeds(config, ds)?;
    let result = summarize(config, ds, &runs);
    let mut log = String::new();
    for run in &runs {
        log.push_str(&run.log);
        run.checkpoint
            .save(&checkpoint_path(out_dir, run.result.seed))?;
    }
    let summary = json!({
        "summary": {
            "metric": result.metric.name(),
            "best_val": result.best_val,
            "test": result.test,
            "train": result.train,
            "seeds": config.seeds,
        }
    });
    let _ = writeln!(log, "{summary}");
    write_text(&out_dir.join("run.log"), &log)?;
    write_json(&out_dir.join("result.json"), &result)?;
    Ok(result)
}

pub fn checkpoint_path(out_dir: &Path, seed: u64) -> std::path::PathBuf {
    out_dir.join("checkpoints").join(format!("seed-{seed}.json"))
}
