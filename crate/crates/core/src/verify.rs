//! Gradient verification suites: every primitive op, and the full model
//! objective on a toy configuration, against central finite differences.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_many, Tape, Var};
use crate::error::Result;
use crate::gnn::GinConfig;
use crate::graph::{Graph, GraphBatch, Label, TaskKind};
use crate::model::{self, Ablation, Mode, ModelConfig, ModelState, Objective};
use crate::params::Binder;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Relative tolerance for ops with kinks and for the full model.
pub const TOL: f64 = 1e-4;
/// Relative tolerance for smooth ops.
pub const TOL_SMOOTH: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coordinates: usize,
    pub passed: bool,
}

type ScalarFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[0.1, 1]`, away from the kinks of relu and abs.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Weighted sum `Σ w ⊙ y` with a fixed random `w`, so the check sees a
/// non-uniform upstream gradient.
fn weighted<'t>(y: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    Ok(y.mul(y.tape().constant(w.clone()))?.sum())
}

fn run(name: &str, f: ScalarFn, inputs: &[Tensor], tol: f64) -> Result<CheckOutcome> {
    let report = grad_check_many(f, inputs, STEP)?;
    Ok(CheckOutcome {
        name: name.to_string(),
        max_rel_error: report.max_rel_error,
        tolerance: tol,
        coordinates: report.coordinates,
        passed: report.max_rel_error < tol,
    })
}

/// Checks every primitive on random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let w34 = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let w3 = uniform(&mut rng, &[3], -1.0, 1.0);
    let a = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[3, 4], -1.0, 1.0);

    let w = w34.clone();
    out.push(run(
        "add/sub/mul/scale/add_scalar",
        Box::new(move |_, x| {
            let s = x[0].add(x[1])?;
            let d = x[0].sub(x[1])?.scale(0.7).add_scalar(0.3);
            weighted(s.mul(d)?, &w)
        }),
        &[a.clone(), b.clone()],
        TOL_SMOOTH,
    )?);

    let m = uniform(&mut rng, &[4, 2], -1.0, 1.0);
    let bias = uniform(&mut rng, &[2], -1.0, 1.0);
    let w32 = uniform(&mut rng, &[3, 2], -1.0, 1.0);
    out.push(run(
        "matmul/add_row",
        Box::new(move |_, x| weighted(x[0].matmul(x[1])?.add_row(x[2])?, &w32)),
        &[a.clone(), m, bias],
        TOL_SMOOTH,
    )?);

    let w36 = uniform(&mut rng, &[3, 6], -1.0, 1.0);
    let c = uniform(&mut rng, &[3, 2], -1.0, 1.0);
    out.push(run(
        "concat_cols",
        Box::new(move |_, x| weighted(x[0].concat_cols(x[1])?, &w36)),
        &[a.clone(), c],
        TOL_SMOOTH,
    )?);

    let x8 = uniform(&mut rng, &[8], -1.0, 1.0);
    out.push(run(
        "sigmoid",
        Box::new(|_, x| Ok(x[0].sigmoid().sum())),
        &[x8],
        TOL_SMOOTH,
    )?);

    let k = off_kink(&mut rng, &[3, 4]);
    let w = w34.clone();
    out.push(run(
        "relu",
        Box::new(move |_, x| weighted(x[0].relu(), &w)),
        &[k.clone()],
        TOL,
    )?);
    let w = w34.clone();
    out.push(run(
        "abs",
        Box::new(move |_, x| weighted(x[0].abs(), &w)),
        &[k],
        TOL,
    )?);

    out.push(run(
        "sum/mean",
        Box::new(|_, x| Ok(x[0].sum().mul(x[0].mean()?)?)),
        &[a.clone()],
        TOL_SMOOTH,
    )?);

    let h = uniform(&mut rng, &[5, 3], -1.0, 1.0);
    let w23 = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let w = w23.clone();
    out.push(run(
        "segment_sum",
        Box::new(move |_, x| weighted(x[0].segment_sum(&[0, 2, 5])?, &w)),
        &[h.clone()],
        TOL_SMOOTH,
    )?);
    let w = w23;
    out.push(run(
        "segment_mean",
        Box::new(move |_, x| weighted(x[0].segment_mean(&[0, 2, 5])?, &w)),
        &[h.clone()],
        TOL_SMOOTH,
    )?);

    let w43 = uniform(&mut rng, &[4, 3], -1.0, 1.0);
    out.push(run(
        "gather_rows",
        Box::new(move |_, x| weighted(x[0].gather_rows(&[4, 0, 4, 2])?, &w43)),
        &[h.clone()],
        TOL_SMOOTH,
    )?);
    let w53 = uniform(&mut rng, &[5, 3], -1.0, 1.0);
    out.push(run(
        "aggregate",
        Box::new(move |_, x| {
            let pairs = [(0, 1), (1, 0), (1, 2), (2, 1), (3, 4), (4, 3), (0, 4), (4, 0)];
            weighted(x[0].aggregate(&pairs)?, &w53)
        }),
        &[h],
        TOL_SMOOTH,
    )?);

    let w = w3.clone();
    out.push(run(
        "l2_norm",
        Box::new(move |_, x| weighted(x[0].l2_norm_rows()?, &w)),
        &[a.clone()],
        TOL_SMOOTH,
    )?);
    let w = w3.clone();
    out.push(run(
        "cosine_similarity",
        Box::new(move |_, x| weighted(x[0].cosine_rows(x[1])?, &w)),
        &[a.clone(), b.clone()],
        TOL_SMOOTH,
    )?);
    let w = w34.clone();
    out.push(run(
        "squared_error",
        Box::new(move |_, x| weighted(x[0].squared_error(x[1])?, &w)),
        &[a.clone(), b.clone()],
        TOL_SMOOTH,
    )?);

    let targets = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0])?;
    let mask = Tensor::matrix(3, 2, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0])?;
    let logits = uniform(&mut rng, &[3, 2], -3.0, 3.0);
    out.push(run(
        "bce_with_logits",
        Box::new(move |_, x| x[0].bce_with_logits(&targets, &mask)),
        &[logits],
        TOL_SMOOTH,
    )?);

    out.push(straight_through_check(&a, &w34)?);
    out.push(stop_gradient_check(&a, &b)?);
    Ok(out)
}

/// A straight-through node carries an arbitrary forward value but passes
/// its upstream gradient to the input unchanged: `d(Σ w ⊙ st(x))/dx = w`.
fn straight_through_check(a: &Tensor, w: &Tensor) -> Result<CheckOutcome> {
    let tape = Tape::new();
    let x = tape.param(a.clone());
    let snapped = a.map(|t| libm::round(t * 4.0) / 4.0);
    let st = x.straight_through(snapped.clone())?;
    let value_ok = *st.value() == snapped;
    let g = st.mul(tape.constant(w.clone()))?.sum().backward()?;
    let err = g
        .get_or_zeros(x)
        .data()
        .iter()
        .zip(w.data())
        .map(|(p, q)| libm::fabs(p - q))
        .fold(0.0, f64::max);
    Ok(CheckOutcome {
        name: "straight_through".into(),
        max_rel_error: if value_ok { err } else { f64::INFINITY },
        tolerance: 0.0,
        coordinates: a.len(),
        passed: value_ok && err == 0.0,
    })
}

/// `d(Σ sg[x] ⊙ y)/dx` must be exactly zero; `d/dy` must equal `x`.
fn stop_gradient_check(a: &Tensor, b: &Tensor) -> Result<CheckOutcome> {
    let tape = Tape::new();
    let x = tape.param(a.clone());
    let y = tape.param(b.clone());
    let loss = x.stop_gradient().mul(y)?.sum();
    let g = loss.backward()?;
    let gx_zero = g.get(x).is_none_or(|t| t.data().iter().all(|&v| v == 0.0));
    let gy = g.get_or_zeros(y);
    let err = gy
        .data()
        .iter()
        .zip(a.data())
        .map(|(p, q)| libm::fabs(p - q))
        .fold(0.0, f64::max);
    Ok(CheckOutcome {
        name: "stop_gradient".into(),
        max_rel_error: if gx_zero { err } else { f64::INFINITY },
        tolerance: 0.0,
        coordinates: a.len() + b.len(),
        passed: gx_zero && err == 0.0,
    })
}

/// Small graphs of different shapes.
pub fn toy_graphs() -> Vec<Graph> {
    let g = |id: &str, types: Vec<usize>, edges: Vec<(usize, usize)>, y: f64| Graph {
        id: id.into(),
        num_nodes: types.len(),
        node_types: types,
        edges,
        label: Label::Scalar(y),
        env: None,
    };
    vec![
        g("tailed-triangle", vec![0, 1, 2, 1], vec![(0, 1), (1, 2), (0, 2), (2, 3)], 0.0),
        g("path", vec![2, 0, 2], vec![(0, 1), (1, 2)], 1.0),
        g(
            "cycle",
            vec![1, 1, 0, 2, 0],
            vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
            1.0,
        ),
    ]
}

/// Toy model (d = 4, 2 layers, 4 codes) with a random frozen codebook,
/// its batch of three graphs, and an objective with every loss active.
pub fn toy_setup(seed: u64) -> Result<(ModelState, GraphBatch, Objective)> {
    let graphs = toy_graphs();
    let refs: Vec<&Graph> = graphs.iter().collect();
    let batch = GraphBatch::from_graphs(&refs, vec![0, 1, 2], 1)?;
    let config = ModelConfig {
        gin: GinConfig::new(3, 4, 2),
        codebook_size: 4,
        decay: 0.99,
        task: TaskKind::Binary,
    };
    let mut state = ModelState::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0DE);
    // Zero-initialised biases put all-dead hidden rows exactly on a relu
    // kink; jitter every parameter to a generic point.
    for t in state.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    state.codebook.initialize_from(&uniform(&mut rng, &[4, 4], -1.0, 1.0))?;
    let objective = Objective {
        mode: Mode::Imold,
        ablation: Ablation::default(),
        lambda_inv: 0.5,
        lambda_reg: 0.5,
        lambda_cmt: 0.1,
        gamma: 0.7,
    };
    Ok((state, batch, objective))
}

/// End-to-end gradient check of the total objective with respect to every
/// parameter tensor of the toy model.
pub fn toy_model_check(seed: u64) -> Result<CheckOutcome> {
    let (state, batch, objective) = toy_setup(seed)?;
    let inputs: Vec<Tensor> = state.tensors().into_iter().cloned().collect();
    let task = state.config.task;
    // The invariant loss uses sg[z_inv]; finite differences must see that
    // target as the constant the gradient treats it as.
    let target = {
        let tape = Tape::new();
        let bound = state.bind(&mut Binder::new(&tape));
        let fwd = model::forward(&bound, &state.codebook, &batch, &objective)?;
        (*fwd.z_inv.value()).clone()
    };
    let report = grad_check_many(
        |tape, vars| {
            let bound = state.bind(&mut Binder::replay(tape, vars));
            let out = model::total_loss_frozen_target(
                &bound,
                &state.codebook,
                &batch,
                &objective,
                task,
                7,
                &target,
            )?;
            Ok(out.total)
        },
        &inputs,
        STEP,
    )?;
    Ok(CheckOutcome {
        name: "toy model total loss".into(),
        max_rel_error: report.max_rel_error,
        tolerance: TOL,
        coordinates: report.coordinates,
        passed: report.max_rel_error < TOL,
    })
}
