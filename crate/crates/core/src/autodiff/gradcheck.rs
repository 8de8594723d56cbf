use alloc::format;
use alloc::vec::Vec;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurs.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Checks `d f / d x` for a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|tape, xs| f(tape, xs[0]), core::slice::from_ref(x), step)
}

/// Checks the gradient of a scalar function with respect to every
/// coordinate of every input tensor.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let y = f(&tape, &vars)?;
        finite(y.item(), "loss")?;
        let grads = y.backward()?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&tape, &vars)?.item();
        finite(y, "perturbed loss")
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[ti].len() {
            let base = inputs[ti].data()[j];
            work[ti].data_mut()[j] = base + step;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = base - step;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = base;
            let numeric = (up - down) / (2.0 * step);
            let a = finite(grad.data()[j], "analytic gradient")?;
            let err = libm::fabs(a - numeric) / numeric.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, j);
            }
        }
    }
    Ok(report)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is not finite: {v}")))
    }
}
