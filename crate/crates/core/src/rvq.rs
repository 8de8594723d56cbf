//! Residual vector quantization against an EMA-maintained codebook.
//!
//! Every node row `h` is snapped to its nearest code `e_k` and the output is
//! `e_k + h`. The code is a constant for differentiation, so the encoder
//! gradient flows through the residual term alone; the commitment loss
//! `Σ ‖sg[e_k] − h‖²` pulls rows toward their codes. Codes themselves move
//! only through exponential moving averages of the rows assigned to them.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{contract, shape_err, Error, Result};
use crate::tensor::{sq_dist, Tensor};

/// Floor on EMA counts when forming `e_k = m_k / N_k`.
pub const DEN_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// `|C| × d` code vectors.
    pub codes: Tensor,
    /// EMA assignment counts `N_k`.
    pub counts: Vec<f64>,
    /// `|C| × d` EMA sums `m_k`.
    pub sums: Tensor,
    pub decay: f64,
    /// Lifetime number of rows assigned to each code.
    pub usage: Vec<u64>,
    pub initialized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizeMode {
    /// `Q(h) + h`.
    #[default]
    Full,
    /// Quantization skipped: output is `h`.
    NoVq,
    /// `Q(h)` alone, with a straight-through gradient to `h`.
    NoResidual,
}

pub struct QuantizeResult<'t> {
    pub output: Var<'t>,
    /// Code index per node row; empty when quantization is bypassed.
    pub assignments: Vec<usize>,
    /// `Σ_v ‖sg[e_k] − h_v‖²`.
    pub commitment: Var<'t>,
}

impl Codebook {
    /// Zeroed codebook awaiting [`Codebook::initialize_from`].
    pub fn new(size: usize, dim: usize, decay: f64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(contract("codebook needs at least one code of positive width"));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config("EMA decay must lie strictly between 0 and 1".into()));
        }
        Ok(Codebook {
            codes: Tensor::zeros(&[size, dim]),
            counts: vec![0.0; size],
            sums: Tensor::zeros(&[size, dim]),
            decay,
            usage: vec![0; size],
            initialized: false,
        })
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.codes.cols()
    }

    /// Seeds code `k` with row `k mod rows` of `h`, with `N_k = 1` and
    /// `m_k = e_k`.
    pub fn initialize_from(&mut self, h: &Tensor) -> Result<()> {
        let (rows, cols) = h.require_matrix("codebook_init")?;
        if cols != self.dim() {
            return Err(shape_err("codebook_init", h.shape(), self.codes.shape()));
        }
        if rows == 0 {
            return Err(contract("cannot initialise a codebook from zero rows"));
        }
        for k in 0..self.size() {
            self.codes.row_mut(k).copy_from_slice(h.row(k % rows));
        }
        self.sums = self.codes.clone();
        self.counts.iter_mut().for_each(|n| *n = 1.0);
        self.initialized = true;
        Ok(())
    }

    /// Index of the nearest code; ties go to the lowest index.
    pub fn nearest(&self, row: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size() {
            let d = sq_dist(row, self.codes.row(k));
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn assign(&self, h: &Tensor) -> Result<Vec<usize>> {
        if self.size() == 0 {
            return Err(contract("empty codebook"));
        }
        let (rows, cols) = h.require_matrix("quantize")?;
        if cols != self.dim() {
            return Err(shape_err("quantize", h.shape(), self.codes.shape()));
        }
        Ok((0..rows).map(|i| self.nearest(h.row(i))).collect())
    }

    /// Code rows for each assignment.
    pub fn lookup(&self, assignments: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(assignments.len() * d);
        for &k in assignments {
            data.extend_from_slice(self.codes.row(k));
        }
        Tensor::matrix(assignments.len(), d, data).expect("lookup shape")
    }

    /// One EMA step over the rows of `h` and their assignments:
    /// `N_k ← η N_k + (1−η) n_k`, `m_k ← η m_k + (1−η) Σ h_v`,
    /// `e_k ← m_k / max(N_k, 1e-5)`. Unassigned codes decay too.
    pub fn ema_update(&mut self, h: &Tensor, assignments: &[usize]) -> Result<()> {
        let (rows, cols) = h.require_matrix("ema_update")?;
        if cols != self.dim() || rows != assignments.len() {
            return Err(shape_err("ema_update", h.shape(), &[assignments.len(), self.dim()]));
        }
        let size = self.size();
        let mut hits = vec![0usize; size];
        let mut batch_sums = Tensor::zeros(&[size, cols]);
        for (i, &k) in assignments.iter().enumerate() {
            if k >= size {
                return Err(contract("assignment outside the codebook"));
            }
            hits[k] += 1;
            for (s, x) in batch_sums.row_mut(k).iter_mut().zip(h.row(i)) {
                *s += x;
            }
        }
        let eta = self.decay;
        for k in 0..size {
            self.counts[k] = self.counts[k] * eta + hits[k] as f64 * (1.0 - eta);
            self.usage[k] += hits[k] as u64;
            let den = self.counts[k].max(DEN_FLOOR);
            let new_sums: Vec<f64> = self
                .sums
                .row(k)
                .iter()
                .zip(batch_sums.row(k))
                .map(|(m, s)| m * eta + s * (1.0 - eta))
                .collect();
            for ((m, e), v) in self
                .sums
                .row_mut(k)
                .iter_mut()
                .zip(self.codes.row_mut(k).iter_mut())
                .zip(new_sums)
            {
                *m = v;
                *e = v / den;
            }
        }
        Ok(())
    }
}

/// Quantizes node representations under the given mode.
pub fn quantize<'t>(book: &Codebook, h: Var<'t>, mode: QuantizeMode) -> Result<QuantizeResult<'t>> {
    let tape = h.tape();
    if mode == QuantizeMode::NoVq {
        return Ok(QuantizeResult {
            output: h,
            assignments: Vec::new(),
            commitment: tape.constant(Tensor::scalar(0.0)),
        });
    }
    let hv = h.value();
    let assignments = book.assign(&hv)?;
    let quantized = book.lookup(&assignments);
    let codes = tape.constant(quantized.clone());
    let commitment = codes.squared_error(h)?.sum();
    let output = match mode {
        QuantizeMode::Full => h.add(codes)?,
        _ => h.straight_through(quantized)?,
    };
    Ok(QuantizeResult {
        output,
        assignments,
        commitment,
    })
}
