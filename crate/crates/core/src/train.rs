//! Training loop with validation-based model selection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::gnn::GinConfig;
use crate::graph::{batches_in_order, training_batches, Graph, TaskKind};
use crate::metrics::{self, EvalReport};
use crate::model::{self, Ablation, LossBreakdown, Mode, ModelConfig, ModelState, Objective};
use crate::optim::Adam;
use crate::params::Binder;
use crate::rvq::QuantizeMode;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RocAuc,
    AveragePrecision,
    Mae,
    Accuracy,
}

impl MetricKind {
    pub fn for_task(task: TaskKind) -> MetricKind {
        match task {
            TaskKind::Binary => MetricKind::RocAuc,
            TaskKind::Multilabel(_) => MetricKind::AveragePrecision,
            TaskKind::Regression => MetricKind::Mae,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != MetricKind::Mae
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::RocAuc => "roc_auc",
            MetricKind::AveragePrecision => "average_precision",
            MetricKind::Mae => "mae",
            MetricKind::Accuracy => "accuracy",
        }
    }

    fn better(self, candidate: f64, incumbent: f64) -> bool {
        if self.higher_is_better() {
            candidate > incumbent
        } else {
            candidate < incumbent
        }
    }
}

fn default_lr() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    200
}

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lambda_inv: f64,
    pub lambda_reg: f64,
    pub lambda_cmt: f64,
    pub gamma: f64,
    /// EMA decay η of the codebook.
    pub decay: f64,
    pub codebook_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub ablation: Ablation,
    /// Dataset file, resolved by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Overrides the task inferred from labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    /// Overrides the task's default selection metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    /// Node-type alphabet size; inferred from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_type_count: Option<usize>,
}

impl Default for RunConfig {
    /// Defaults for synthetic runs.
    fn default() -> Self {
        RunConfig {
            lambda_inv: 0.01,
            lambda_reg: 0.5,
            lambda_cmt: 0.1,
            gamma: 0.7,
            decay: 0.99,
            codebook_size: 100,
            hidden_dim: 64,
            num_layers: 3,
            batch_size: 128,
            lr: default_lr(),
            max_epochs: default_epochs(),
            seeds: alloc::vec![0],
            mode: Mode::Imold,
            ablation: Ablation::default(),
            dataset: None,
            task: None,
            metric: None,
            node_type_count: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if [self.lambda_inv, self.lambda_reg, self.lambda_cmt]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie strictly between 0 and 1");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie strictly between 0 and 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.codebook_size == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("codebook_size, hidden_dim and num_layers must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            mode: self.mode,
            ablation: self.ablation,
            lambda_inv: self.lambda_inv,
            lambda_reg: self.lambda_reg,
            lambda_cmt: self.lambda_cmt,
            gamma: self.gamma,
        }
    }

    pub fn model_config(&self, node_type_count: usize, task: TaskKind) -> ModelConfig {
        ModelConfig {
            gin: GinConfig::new(
                self.node_type_count.unwrap_or(node_type_count),
                self.hidden_dim,
                self.num_layers,
            ),
            codebook_size: self.codebook_size,
            decay: self.decay,
            task,
        }
    }
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-averaged losses.
    pub loss: LossBreakdown,
    pub val_metric: f64,
    pub test_metric: f64,
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metric: MetricKind,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub test_metric_at_best_val: f64,
    pub train_metric_at_best_val: f64,
    pub curves: Vec<EpochRecord>,
}

/// Model outputs on a list of graphs, in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `n × K` logits (regression outputs for regression tasks).
    pub outputs: Tensor,
    pub targets: Tensor,
    pub mask: Tensor,
    pub z_inv: Tensor,
    pub z_spu: Tensor,
    /// `readout(H′)`.
    pub z: Tensor,
}

/// Frozen-state inference.
pub fn predict(
    state: &ModelState,
    objective: &Objective,
    graphs: &[Graph],
    batch_size: usize,
) -> Result<Predictions> {
    let task = state.config.task;
    let k = task.arity();
    let d = state.hidden_dim();
    let order: Vec<usize> = (0..graphs.len()).collect();
    let mut cols: [Vec<f64>; 6] = Default::default();
    for batch in batches_in_order(graphs, &order, batch_size.max(1), k)? {
        let tape = Tape::new();
        let vars = state.bind(&mut Binder::frozen(&tape));
        let f = model::forward(&vars, &state.codebook, &batch, objective)?;
        for (dst, src) in cols.iter_mut().zip([
            &*f.logits.value(),
            &batch.targets,
            &batch.mask,
            &*f.z_inv.value(),
            &*f.z_spu.value(),
            &*f.z.value(),
        ]) {
            dst.extend_from_slice(src.data());
        }
    }
    let n = graphs.len();
    let [outputs, targets, mask, z_inv, z_spu, z] = cols;
    Ok(Predictions {
        outputs: Tensor::matrix(n, k, outputs)?,
        targets: Tensor::matrix(n, k, targets)?,
        mask: Tensor::matrix(n, k, mask)?,
        z_inv: Tensor::matrix(n, d, z_inv)?,
        z_spu: Tensor::matrix(n, d, z_spu)?,
        z: Tensor::matrix(n, d, z)?,
    })
}

/// Scores predictions with one metric.
pub fn score_predictions(p: &Predictions, metric: MetricKind) -> Result<EvalReport> {
    let n = p.outputs.rows();
    let k = p.outputs.cols();
    let first_col = |t: &Tensor| (0..n).map(|i| t.get(i, 0)).collect::<Vec<f64>>();
    let (value, per_task) = match metric {
        MetricKind::RocAuc if k != 1 => {
            return Err(Error::Config(format!("{} needs a single-output task", metric.name())))
        }
        MetricKind::RocAuc => {
            let labels: Vec<bool> = first_col(&p.targets).iter().map(|&y| y == 1.0).collect();
            (metrics::roc_auc(&first_col(&p.outputs), &labels)?, Vec::new())
        }
        MetricKind::Accuracy => {
            // over every observed entry, so multi-label tasks count each label
            let (logits, labels): (Vec<f64>, Vec<bool>) = (0..n * k)
                .filter(|&j| p.mask.data()[j] != 0.0)
                .map(|j| (p.outputs.data()[j], p.targets.data()[j] == 1.0))
                .unzip();
            (metrics::accuracy(&logits, &labels)?, Vec::new())
        }
        MetricKind::AveragePrecision => {
            let (per, mean) =
                metrics::average_precision(p.outputs.data(), p.targets.data(), p.mask.data(), k)?;
            (mean, per)
        }
        MetricKind::Mae => (metrics::mae(p.outputs.data(), p.targets.data())?, Vec::new()),
    };
    Ok(EvalReport {
        metric: metric.name().into(),
        value,
        per_task,
        n_samples: n,
    })
}

pub fn evaluate(
    state: &ModelState,
    objective: &Objective,
    graphs: &[Graph],
    batch_size: usize,
    metric: MetricKind,
) -> Result<EvalReport> {
    score_predictions(&predict(state, objective, graphs, batch_size)?, metric)
}

/// Everything a training run produces for one seed.
pub struct TrainOutcome {
    pub result: SeedResult,
    /// State at the best validation epoch.
    pub best_state: ModelState,
}

/// Train/val/test graphs of one run.
pub struct TrainData<'a> {
    pub train: &'a [Graph],
    pub val: &'a [Graph],
    pub test: &'a [Graph],
    pub task: TaskKind,
    pub node_type_count: usize,
}

/// One optimisation step on one batch. Returns the batch losses.
pub fn train_step(
    state: &mut ModelState,
    adam: &mut Adam,
    batch: &crate::graph::GraphBatch,
    objective: &Objective,
    perm_seed: u64,
) -> Result<LossBreakdown> {
    let quantizing = objective.quantize_mode();
    if matches!(quantizing, Some(QuantizeMode::Full | QuantizeMode::NoResidual))
        && !state.codebook.initialized
    {
        state.initialize_codebook(batch)?;
    }
    let task = state.config.task;
    let tape = Tape::new();
    let mut binder = Binder::new(&tape);
    let vars = state.bind(&mut binder);
    let out = model::total_loss(&vars, &state.codebook, batch, objective, task, perm_seed)?;
    let b = out.breakdown;
    if ![b.pred, b.inv, b.reg, b.cmt, b.total].iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss {b:?}")));
    }
    let grads = out.total.backward()?;
    let g: Vec<Tensor> = binder.vars().iter().map(|&v| grads.get_or_zeros(v)).collect();
    if let Some(bad) = g.iter().position(|t| !t.all_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient for parameter {bad}")));
    }
    let h = out.forward.h.value();
    let assignments = out.forward.assignments;
    adam.update(&mut state.tensors_mut(), &g)?;
    if !assignments.is_empty() {
        state.codebook.ema_update(&h, &assignments)?;
    }
    Ok(b)
}

/// Trains one seed: per epoch shuffle, step every batch of at least two
/// graphs, evaluate validation and test, keep the best validation state.
pub fn train(config: &RunConfig, data: &TrainData<'_>, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.len() < 2 {
        return Err(Error::Config("training split needs at least two graphs".into()));
    }
    let task = data.task;
    let metric = config.metric.unwrap_or(MetricKind::for_task(task));
    let objective = config.objective();
    let mut state = ModelState::init(config.model_config(data.node_type_count, task), seed)?;
    let mut adam = Adam::new(config.lr);
    let mut best: Option<(usize, f64, f64, ModelState)> = None;
    let mut curves = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let epoch_seed = mix_seed(seed, epoch as u64);
        let batches = training_batches(data.train, config.batch_size, epoch_seed, task.arity())?;
        let mut loss = LossBreakdown::default();
        let weight = 1.0 / batches.len().max(1) as f64;
        for (bi, batch) in batches.iter().enumerate() {
            let b = train_step(&mut state, &mut adam, batch, &objective, mix_seed(epoch_seed, bi as u64))
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("seed {seed} epoch {epoch} batch {bi}: {m}")),
                    other => other,
                })?;
            loss.accumulate(&b, weight);
        }
        let val = evaluate(&state, &objective, data.val, config.batch_size, metric)?.value;
        let test = evaluate(&state, &objective, data.test, config.batch_size, metric)?.value;
        curves.push(EpochRecord {
            epoch,
            loss,
            val_metric: val,
            test_metric: test,
        });
        if best.as_ref().is_none_or(|b| metric.better(val, b.1)) {
            best = Some((epoch, val, test, state.clone()));
        }
    }
    let (best_epoch, best_val, best_test, best_state) =
        best.ok_or_else(|| Error::Config("max_epochs must be positive".into()))?;
    let train_metric = evaluate(&best_state, &objective, data.train, config.batch_size, metric)?.value;
    Ok(TrainOutcome {
        result: SeedResult {
            seed,
            metric,
            best_epoch,
            best_val_metric: best_val,
            test_metric_at_best_val: best_test,
            train_metric_at_best_val: train_metric,
            curves,
        },
        best_state,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}
