//! The invariant-learning model: encoder, residual quantizer, scorer,
//! separation, readout, and the four-term objective.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, shape_err, Error, Result};
use crate::gnn::{self, GinConfig, GinParams, GinVars};
use crate::graph::{GraphBatch, TaskKind};
use crate::params::{Binder, Linear, LinearVars, Mlp, MlpVars};
use crate::rvq::{self, Codebook, QuantizeMode};
use crate::tensor::Tensor;

/// Which pipeline is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Encoder, quantizer, scorer and all four losses.
    #[default]
    Imold,
    /// Encoder, mean readout and classifier, prediction loss only.
    Erm,
    /// ERM with the residual quantizer and its commitment loss.
    ErmRvq,
}

/// Table-style ablation switches on top of [`Mode::Imold`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_vq: bool,
    pub no_r: bool,
    pub no_inv: bool,
    pub no_reg: bool,
    pub no_cmt: bool,
}

/// Loss weights and mode for one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub mode: Mode,
    pub ablation: Ablation,
    pub lambda_inv: f64,
    pub lambda_reg: f64,
    pub lambda_cmt: f64,
    pub gamma: f64,
}

impl Objective {
    pub fn quantize_mode(&self) -> Option<QuantizeMode> {
        match self.mode {
            Mode::Erm => None,
            Mode::ErmRvq if self.ablation.no_r => Some(QuantizeMode::NoResidual),
            Mode::ErmRvq => Some(QuantizeMode::Full),
            Mode::Imold if self.ablation.no_vq => Some(QuantizeMode::NoVq),
            Mode::Imold if self.ablation.no_r => Some(QuantizeMode::NoResidual),
            Mode::Imold => Some(QuantizeMode::Full),
        }
    }

    /// Weights actually applied, after mode and ablation switches.
    pub fn effective_weights(&self) -> (f64, f64, f64) {
        let ab = self.ablation;
        match self.mode {
            Mode::Erm => (0.0, 0.0, 0.0),
            Mode::ErmRvq => (0.0, 0.0, if ab.no_cmt { 0.0 } else { self.lambda_cmt }),
            Mode::Imold => (
                if ab.no_inv { 0.0 } else { self.lambda_inv },
                if ab.no_reg { 0.0 } else { self.lambda_reg },
                if ab.no_cmt || ab.no_vq { 0.0 } else { self.lambda_cmt },
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gin: GinConfig,
    pub codebook_size: usize,
    pub decay: f64,
    pub task: TaskKind,
}

/// All learned state: gradient parameters plus the EMA codebook.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: GinParams,
    pub scorer: GinParams,
    pub codebook: Codebook,
    /// ω: `2d → d → d`.
    pub predictor: Mlp,
    /// ρ: `d → K` logits (or regression outputs).
    pub classifier: Linear,
}

/// [`ModelState`] parameters bound to a tape.
pub struct ModelVars<'t> {
    pub encoder: GinVars<'t>,
    pub scorer: GinVars<'t>,
    pub predictor: MlpVars<'t>,
    pub classifier: LinearVars<'t>,
}

impl ModelState {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.gin.validate()?;
        let d = config.gin.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ModelState {
            encoder: GinParams::init(config.gin, &mut rng)?,
            scorer: GinParams::init(config.gin, &mut rng)?,
            codebook: Codebook::new(config.codebook_size, d, config.decay)?,
            predictor: Mlp::init(&mut rng, 2 * d, d, d),
            classifier: Linear::init(&mut rng, d, config.task.arity()),
            config,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.gin.hidden_dim
    }

    /// Gradient parameters in binding order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.scorer.tensors_mut());
        v.extend(self.predictor.tensors_mut());
        v.extend(self.classifier.tensors_mut());
        v
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.scorer.tensors());
        v.extend(self.predictor.tensors());
        v.extend(self.classifier.tensors());
        v
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> ModelVars<'t> {
        ModelVars {
            encoder: self.encoder.bind(b),
            scorer: self.scorer.bind(b),
            predictor: self.predictor.bind(b),
            classifier: self.classifier.bind(b),
        }
    }

    /// Checks every tensor against the config.
    pub fn check_shapes(&self) -> Result<()> {
        self.encoder.check_shapes()?;
        self.scorer.check_shapes()?;
        let d = self.hidden_dim();
        let k = self.config.task.arity();
        let ok = self.encoder.config == self.config.gin
            && self.scorer.config == self.config.gin
            && self.codebook.codes.shape() == [self.config.codebook_size, d]
            && self.codebook.sums.shape() == [self.config.codebook_size, d]
            && self.codebook.counts.len() == self.config.codebook_size
            && self.codebook.usage.len() == self.config.codebook_size
            && self.predictor.hidden.weight.shape() == [2 * d, d]
            && self.predictor.hidden.bias.shape() == [d]
            && self.predictor.output.weight.shape() == [d, d]
            && self.predictor.output.bias.shape() == [d]
            && self.classifier.weight.shape() == [d, k]
            && self.classifier.bias.shape() == [k];
        if ok {
            Ok(())
        } else {
            Err(Error::Config("model tensors disagree with model config".into()))
        }
    }

    /// Seeds the codebook from the encoder's output on `batch`.
    pub fn initialize_codebook(&mut self, batch: &GraphBatch) -> Result<()> {
        let tape = Tape::new();
        let vars = self.encoder.bind(&mut Binder::frozen(&tape));
        let h = gnn::encode(&vars, batch)?.value();
        self.codebook.initialize_from(&h)
    }
}

/// Scalar losses of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred: f64,
    pub inv: f64,
    pub reg: f64,
    pub cmt: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.pred += weight * other.pred;
        self.inv += weight * other.inv;
        self.reg += weight * other.reg;
        self.cmt += weight * other.cmt;
        self.total += weight * other.total;
    }
}

/// Intermediate values of one forward pass.
pub struct Forward<'t> {
    /// Encoder output `H`.
    pub h: Var<'t>,
    /// Quantizer output `H′` (equal to `H` without quantization).
    pub h_prime: Var<'t>,
    pub scores: Option<Var<'t>>,
    pub z_inv: Var<'t>,
    pub z_spu: Var<'t>,
    /// `readout(H′)`.
    pub z: Var<'t>,
    pub logits: Var<'t>,
    pub assignments: Vec<usize>,
    pub commitment: Var<'t>,
}

/// `H′ ⊙ S` and `H′ ⊙ (1 − S)`.
pub fn separate<'t>(h_prime: Var<'t>, scores: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    // Per entry the larger half is a rounded product and the smaller one an
    // exact difference, so H_inv + H_spu reproduces H′ bit for bit. The
    // value differs from a plain product by at most one ulp; the gradient is
    // that of H′⊙S.
    let product = h_prime.mul(scores)?;
    let exact = h_prime
        .value()
        .zip(&scores.value(), |h, s| if s >= 0.5 { h * s } else { h - h * (1.0 - s) });
    let inv = product.straight_through(exact)?;
    let spu = h_prime.sub(inv)?;
    Ok((inv, spu))
}

/// Mean readout of both halves.
pub fn graph_reps<'t>(
    h_inv: Var<'t>,
    h_spu: Var<'t>,
    segment_offsets: &[usize],
) -> Result<(Var<'t>, Var<'t>)> {
    Ok((
        gnn::readout(h_inv, segment_offsets)?,
        gnn::readout(h_spu, segment_offsets)?,
    ))
}

/// Uniform random permutation of `0..n` (fixed points allowed).
pub fn batch_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// `−Σ_i cos(sg[z_inv_i], ω(z_inv_i ⊕ z_spu_π(i)))` for a seeded
/// permutation `π` of the batch.
pub fn invariant_loss<'t>(
    z_inv: Var<'t>,
    z_spu: Var<'t>,
    predictor: &MlpVars<'t>,
    perm_seed: u64,
) -> Result<Var<'t>> {
    let b = z_inv.value().rows();
    if b < 2 {
        return Err(contract("invariant loss needs a batch of at least two graphs"));
    }
    let perm = batch_permutation(b, perm_seed);
    invariant_loss_with(z_inv, z_spu, predictor, &perm)
}

/// [`invariant_loss`] with an explicit permutation.
pub fn invariant_loss_with<'t>(
    z_inv: Var<'t>,
    z_spu: Var<'t>,
    predictor: &MlpVars<'t>,
    perm: &[usize],
) -> Result<Var<'t>> {
    invariant_loss_against(z_inv.stop_gradient(), z_inv, z_spu, predictor, perm)
}

/// `−Σ_i cos(target_i, ω(z_inv_i ⊕ z_spu_π(i)))` with the target taken as
/// given; [`invariant_loss_with`] passes `sg[z_inv]`.
pub fn invariant_loss_against<'t>(
    target: Var<'t>,
    z_inv: Var<'t>,
    z_spu: Var<'t>,
    predictor: &MlpVars<'t>,
    perm: &[usize],
) -> Result<Var<'t>> {
    let augmented = z_inv.concat_cols(z_spu.gather_rows(perm)?)?;
    let predicted = predictor.forward(augmented)?;
    Ok(target.cosine_rows(predicted)?.sum().scale(-1.0))
}

/// Task loss on logits: mean logit-BCE over observed entries for binary and
/// multi-label tasks, mean squared error for regression.
pub fn prediction_loss<'t>(
    logits: Var<'t>,
    targets: &Tensor,
    mask: &Tensor,
    task: TaskKind,
) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape != targets.shape() {
        return Err(shape_err("prediction_loss", &shape, targets.shape()));
    }
    match task {
        TaskKind::Binary | TaskKind::Multilabel(_) => logits.bce_with_logits(targets, mask),
        TaskKind::Regression => {
            let y = logits.tape().constant(targets.clone());
            logits.squared_error(y)?.mean()
        }
    }
}

/// `| mean(S) − γ |` over the whole batch.
pub fn scorer_regularizer<'t>(scores: Var<'t>, gamma: f64) -> Result<Var<'t>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config("gamma must lie in [0, 1]".into()));
    }
    Ok(scores.mean()?.add_scalar(-gamma).abs())
}

/// Runs the model on a batch with a frozen codebook.
pub fn forward<'t>(
    vars: &ModelVars<'t>,
    codebook: &Codebook,
    batch: &GraphBatch,
    objective: &Objective,
) -> Result<Forward<'t>> {
    let h = gnn::encode(&vars.encoder, batch)?;
    let tape = h.tape();
    let offsets = &batch.segment_offsets;
    let (h_prime, assignments, commitment) = match objective.quantize_mode() {
        Some(mode) => {
            let q = rvq::quantize(codebook, h, mode)?;
            (q.output, q.assignments, q.commitment)
        }
        None => (h, Vec::new(), tape.constant(Tensor::scalar(0.0))),
    };
    let z = gnn::readout(h_prime, offsets)?;
    let (scores, z_inv, z_spu) = match objective.mode {
        Mode::Imold => {
            let s = gnn::score(&vars.scorer, batch)?;
            let (h_inv, h_spu) = separate(h_prime, s)?;
            let (zi, zs) = graph_reps(h_inv, h_spu, offsets)?;
            (Some(s), zi, zs)
        }
        Mode::Erm | Mode::ErmRvq => {
            let zeros = tape.constant(Tensor::zeros(&z.shape()));
            (None, z, zeros)
        }
    };
    let logits = vars.classifier.forward(z_inv)?;
    Ok(Forward {
        h,
        h_prime,
        scores,
        z_inv,
        z_spu,
        z,
        logits,
        assignments,
        commitment,
    })
}

/// Objective value of one batch.
pub struct LossOutput<'t> {
    pub total: Var<'t>,
    pub breakdown: LossBreakdown,
    pub forward: Forward<'t>,
}

/// Full pipeline plus `pred + λ1·inv + λ2·reg + λ3·cmt`, with weights
/// zeroed by the mode and ablation switches.
pub fn total_loss<'t>(
    vars: &ModelVars<'t>,
    codebook: &Codebook,
    batch: &GraphBatch,
    objective: &Objective,
    task: TaskKind,
    perm_seed: u64,
) -> Result<LossOutput<'t>> {
    total_loss_impl(vars, codebook, batch, objective, task, perm_seed, None)
}

/// [`total_loss`] with the stop-gradient target of the invariant loss
/// replaced by a fixed tensor. At `target = z_inv` the value and the
/// gradient coincide with [`total_loss`], while finite differences of this
/// surrogate see the target as the constant the gradient treats it as.
pub fn total_loss_frozen_target<'t>(
    vars: &ModelVars<'t>,
    codebook: &Codebook,
    batch: &GraphBatch,
    objective: &Objective,
    task: TaskKind,
    perm_seed: u64,
    target: &Tensor,
) -> Result<LossOutput<'t>> {
    total_loss_impl(vars, codebook, batch, objective, task, perm_seed, Some(target))
}

fn total_loss_impl<'t>(
    vars: &ModelVars<'t>,
    codebook: &Codebook,
    batch: &GraphBatch,
    objective: &Objective,
    task: TaskKind,
    perm_seed: u64,
    target: Option<&Tensor>,
) -> Result<LossOutput<'t>> {
    let fwd = forward(vars, codebook, batch, objective)?;
    let tape = fwd.h.tape();
    let pred = prediction_loss(fwd.logits, &batch.targets, &batch.mask, task)?;
    let zero = || tape.constant(Tensor::scalar(0.0));
    let (inv, reg) = match (objective.mode, fwd.scores) {
        (Mode::Imold, Some(s)) => (
            match target {
                None => invariant_loss(fwd.z_inv, fwd.z_spu, &vars.predictor, perm_seed)?,
                Some(t) => {
                    let b = fwd.z_inv.value().rows();
                    if b < 2 {
                        return Err(contract(
                            "invariant loss needs a batch of at least two graphs",
                        ));
                    }
                    let perm = batch_permutation(b, perm_seed);
                    let target = tape.constant(t.clone());
                    invariant_loss_against(target, fwd.z_inv, fwd.z_spu, &vars.predictor, &perm)?
                }
            },
            scorer_regularizer(s, objective.gamma)?,
        ),
        _ => (zero(), zero()),
    };
    let cmt = fwd.commitment;
    let (w_inv, w_reg, w_cmt) = objective.effective_weights();
    let mut total = pred;
    for (term, w) in [(inv, w_inv), (reg, w_reg), (cmt, w_cmt)] {
        if w != 0.0 {
            total = total.add(term.scale(w))?;
        }
    }
    let breakdown = LossBreakdown {
        pred: pred.item(),
        inv: inv.item(),
        reg: reg.item(),
        cmt: cmt.item(),
        total: total.item(),
    };
    Ok(LossOutput {
        total,
        breakdown,
        forward: fwd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Mlp;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn separation_extremes() {
        let tape = Tape::new();
        let hp = tape.constant(mat(2, 2, &[1.0, -2.0, 3.0, 4.0]));
        let ones = tape.constant(Tensor::full(&[2, 2], 1.0));
        let (i, s) = separate(hp, ones).unwrap();
        assert_eq!(i.value().data(), hp.value().data());
        assert!(s.value().data().iter().all(|&x| x == 0.0));
        let half = tape.constant(Tensor::full(&[2, 2], 0.5));
        let (i, s) = separate(hp, half).unwrap();
        assert_eq!(i.value().data(), &[0.5, -1.0, 1.5, 2.0]);
        assert_eq!(i.value().data(), s.value().data());
        let bad = tape.constant(Tensor::full(&[1, 2], 0.5));
        assert!(separate(hp, bad).is_err());
    }

    #[test]
    fn regularizer_hand_values() {
        let tape = Tape::new();
        let s = |v: f64| tape.constant(Tensor::full(&[3, 2], v));
        assert!(scorer_regularizer(s(0.7), 0.7).unwrap().item().abs() < 1e-15);
        assert_eq!(scorer_regularizer(s(1.0), 0.5).unwrap().item(), 0.5);
        assert_eq!(scorer_regularizer(s(0.0), 0.9).unwrap().item(), 0.9);
    }

    #[test]
    fn prediction_loss_cases() {
        let tape = Tape::new();
        let logit = tape.constant(mat(1, 1, &[0.0]));
        let l = prediction_loss(logit, &mat(1, 1, &[1.0]), &mat(1, 1, &[1.0]), TaskKind::Binary)
            .unwrap();
        assert!((l.item() - core::f64::consts::LN_2).abs() < 1e-12);

        let y = mat(2, 1, &[0.3, -1.5]);
        let exact = tape.constant(y.clone());
        let l = prediction_loss(exact, &y, &Tensor::full(&[2, 1], 1.0), TaskKind::Regression)
            .unwrap();
        assert_eq!(l.item(), 0.0);

        // second task missing: only the first entry counts
        let logits = tape.constant(mat(1, 2, &[0.0, 5.0]));
        let l = prediction_loss(
            logits,
            &mat(1, 2, &[1.0, 0.0]),
            &mat(1, 2, &[1.0, 0.0]),
            TaskKind::Multilabel(2),
        )
        .unwrap();
        assert!((l.item() - core::f64::consts::LN_2).abs() < 1e-12);
        let empty = prediction_loss(
            logits,
            &mat(1, 2, &[1.0, 0.0]),
            &mat(1, 2, &[0.0, 0.0]),
            TaskKind::Multilabel(2),
        );
        assert!(empty.is_err());
    }

    fn identity_predictor(d: usize) -> Mlp {
        // ω(a ⊕ b) = relu(a) for nonnegative a.
        let mut hidden = Linear::zeros(2 * d, d);
        for i in 0..d {
            hidden.weight.data_mut()[i * d + i] = 1.0;
        }
        let mut output = Linear::zeros(d, d);
        for i in 0..d {
            output.weight.data_mut()[i * d + i] = 1.0;
        }
        Mlp { hidden, output }
    }

    #[test]
    fn invariant_loss_bounds_and_extremes() {
        let tape = Tape::new();
        let pred = identity_predictor(2);
        let vars = pred.bind(&mut Binder::new(&tape));
        let z_inv = tape.param(mat(3, 2, &[1.0, 2.0, 0.5, 0.1, 3.0, 0.0]));
        let z_spu = tape.param(mat(3, 2, &[9.0, -1.0, 4.0, 4.0, -2.0, 7.0]));
        let l = invariant_loss(z_inv, z_spu, &vars, 5).unwrap();
        assert!((l.item() + 3.0).abs() < 1e-12);

        // predictor output orthogonal to z_inv
        let mut rot = Linear::zeros(2, 2);
        rot.weight = mat(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let orth = Mlp {
            hidden: pred.hidden.clone(),
            output: rot,
        };
        let vars = orth.bind(&mut Binder::new(&tape));
        let l = invariant_loss(z_inv, z_spu, &vars, 5).unwrap();
        assert!(l.item().abs() < 1e-12);

        let one = tape.param(mat(1, 2, &[1.0, 1.0]));
        assert!(invariant_loss(one, one, &vars, 0).is_err());
    }

    #[test]
    fn stop_gradient_blocks_target_branch() {
        // With ω ignoring its spurious half, the only path from z_inv to the
        // loss besides the target is through ω's first half. Zero that half
        // and the gradient on z_inv must vanish.
        let tape = Tape::new();
        let mut pred = identity_predictor(2);
        pred.hidden.weight = Tensor::zeros(&[4, 2]);
        pred.hidden.bias = Tensor::full(&[2], 1.0);
        let vars = pred.bind(&mut Binder::new(&tape));
        let z_inv = tape.param(mat(2, 2, &[1.0, 2.0, -0.5, 0.3]));
        let z_spu = tape.param(mat(2, 2, &[0.1, 0.2, 0.3, 0.4]));
        let l = invariant_loss(z_inv, z_spu, &vars, 1).unwrap();
        let g = l.backward().unwrap();
        assert!(g.get(z_inv).map_or(true, |t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn permutation_is_seeded() {
        assert_eq!(batch_permutation(10, 4), batch_permutation(10, 4));
        let mut p = batch_permutation(10, 4);
        p.sort_unstable();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
    }
}
