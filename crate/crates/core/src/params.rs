//! Trainable parameter containers and their binding onto a tape.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Places parameters on a tape, remembering the order they were bound in.
pub struct Binder<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
    trainable: bool,
    replay: Option<Vec<Var<'t>>>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Binder {
            tape,
            vars: Vec::new(),
            trainable: true,
            replay: None,
        }
    }

    /// Binder that hands out `vars` in order instead of creating leaves.
    /// Lets a caller own the parameter variables, as gradient checks do.
    pub fn replay(tape: &'t Tape, vars: &[Var<'t>]) -> Self {
        let mut rev = vars.to_vec();
        rev.reverse();
        Binder {
            replay: Some(rev),
            ..Self::new(tape)
        }
    }

    /// Binder whose parameters are constants (inference only).
    pub fn frozen(tape: &'t Tape) -> Self {
        Binder {
            trainable: false,
            ..Self::new(tape)
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn bind(&mut self, t: &Tensor) -> Var<'t> {
        let v = if let Some(stack) = &mut self.replay {
            let v = stack.pop().expect("replay binder ran out of variables");
            assert_eq!(v.value().shape(), t.shape(), "replayed variable has the wrong shape");
            v
        } else if self.trainable {
            self.tape.param(t.clone())
        } else {
            self.tape.constant(t.clone())
        };
        self.vars.push(v);
        v
    }

    /// Bound variables, in binding order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// Uniform Glorot initialisation for a `fan_in × fan_out` weight.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("glorot shape")
}

/// Affine map `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub struct LinearVars<'t> {
    weight: Var<'t>,
    bias: Var<'t>,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: glorot(rng, fan_in, fan_out),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> LinearVars<'t> {
        LinearVars {
            weight: b.bind(&self.weight),
            bias: b.bind(&self.bias),
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

impl<'t> LinearVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.weight)?.add_row(self.bias)
    }
}

/// Two affine maps with a ReLU between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

pub struct MlpVars<'t> {
    hidden: LinearVars<'t>,
    output: LinearVars<'t>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            hidden: Linear::init(rng, input, hidden),
            output: Linear::init(rng, hidden, output),
        }
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t>) -> MlpVars<'t> {
        MlpVars {
            hidden: self.hidden.bind(b),
            output: self.output.bind(b),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(4);
        v.extend(self.hidden.tensors_mut());
        v.extend(self.output.tensors_mut());
        v
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(4);
        v.extend(self.hidden.tensors());
        v.extend(self.output.tensors());
        v
    }
}

impl<'t> MlpVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.output.forward(self.hidden.forward(x)?.relu())
    }
}
