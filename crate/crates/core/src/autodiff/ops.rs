//! Primitive operations: forward rules as methods on [`Var`], reverse rules
//! in [`propagate`].

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Node, Op, Var, COSINE_EPS};
use crate::error::{contract, shape_err, Result};
use crate::tensor::{dot, Tensor};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `max(x, 0) - x*y + ln(1 + exp(-|x|))`, the overflow-free form of
/// binary cross-entropy on a logit.
pub(crate) fn bce_logit(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + libm::log1p(libm::exp(-libm::fabs(x)))
}

fn check_offsets(offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
        return Err(contract("segment offsets must start at 0 and end at the row count"));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(contract("empty segment"));
    }
    Ok(())
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            core::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    fn binary_same_shape(
        &self,
        rhs: Var<'t>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let (a, b) = (self.value(), rhs.value());
        a.same_shape(&b, op_name)?;
        Ok(self.tape.record(a.zip(&b, f), op))
    }

    pub fn add(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(rhs, "add", |a, b| a + b, Op::Add(self.id, rhs.id))
    }

    pub fn sub(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(rhs, "sub", |a, b| a - b, Op::Sub(self.id, rhs.id))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(rhs, "mul", |a, b| a * b, Op::Mul(self.id, rhs.id))
    }

    /// Elementwise `(self - rhs)²`.
    pub fn squared_error(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(
            rhs,
            "squared_error",
            |a, b| (a - b) * (a - b),
            Op::SquaredError(self.id, rhs.id),
        )
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.tape.record(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.tape.record(v, Op::AddScalar(self.id))
    }

    /// `c - self`, elementwise.
    pub fn rsub_scalar(&self, c: f64) -> Var<'t> {
        self.scale(-1.0).add_scalar(c)
    }

    /// Adds a length-`cols` vector to every row of a matrix.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row);
        let (m, r) = (self.value(), row.value());
        let (_, cols) = m.require_matrix("add_row")?;
        if r.len() != cols {
            return Err(shape_err("add_row", m.shape(), r.shape()));
        }
        let mut out = (*m).clone();
        let rd = r.data();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(rd) {
                *o += b;
            }
        }
        Ok(self.tape.record(out, Op::AddRow(self.id, row.id)))
    }

    pub fn matmul(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let out = self.value().matmul(&rhs.value())?;
        Ok(self.tape.record(out, Op::MatMul(self.id, rhs.id)))
    }

    /// Concatenation along the last dimension of two matrices.
    pub fn concat_cols(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let (a, b) = (self.value(), rhs.value());
        let (ra, ca) = a.require_matrix("concat_cols")?;
        let (rb, cb) = b.require_matrix("concat_cols")?;
        if ra != rb {
            return Err(shape_err("concat_cols", a.shape(), b.shape()));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        let out = Tensor::matrix(ra, ca + cb, data)?;
        Ok(self.tape.record(out, Op::ConcatCols(self.id, rhs.id)))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.tape.record(v, Op::Sigmoid(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.tape.record(v, Op::Relu(self.id))
    }

    pub fn abs(&self) -> Var<'t> {
        let v = self.value().map(libm::fabs);
        self.tape.record(v, Op::Abs(self.id))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape.record(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.is_empty() {
            return Err(contract("mean of an empty tensor"));
        }
        let s: f64 = v.data().iter().sum();
        Ok(self
            .tape
            .record(Tensor::scalar(s / v.len() as f64), Op::Mean(self.id)))
    }

    fn segment_reduce(&self, offsets: &[usize], average: bool) -> Result<Tensor> {
        let v = self.value();
        let (rows, cols) = v.require_matrix("segment")?;
        check_offsets(offsets, rows)?;
        let segments = offsets.len() - 1;
        let mut out = vec![0.0; segments * cols];
        for s in 0..segments {
            let o = &mut out[s * cols..(s + 1) * cols];
            for r in offsets[s]..offsets[s + 1] {
                for (acc, x) in o.iter_mut().zip(v.row(r)) {
                    *acc += x;
                }
            }
            if average {
                let n = (offsets[s + 1] - offsets[s]) as f64;
                o.iter_mut().for_each(|x| *x /= n);
            }
        }
        Tensor::matrix(segments, cols, out)
    }

    /// Row sums per segment; `offsets` has one more entry than segments.
    pub fn segment_sum(&self, offsets: &[usize]) -> Result<Var<'t>> {
        let out = self.segment_reduce(offsets, false)?;
        Ok(self
            .tape
            .record(out, Op::SegmentSum(self.id, Rc::from(offsets))))
    }

    /// Row means per segment; `offsets` has one more entry than segments.
    pub fn segment_mean(&self, offsets: &[usize]) -> Result<Var<'t>> {
        let out = self.segment_reduce(offsets, true)?;
        Ok(self
            .tape
            .record(out, Op::SegmentMean(self.id, Rc::from(offsets))))
    }

    /// Selects rows by index (embedding lookup).
    pub fn gather_rows(&self, index: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let (rows, cols) = v.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(contract("gather_rows index out of range"));
            }
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::matrix(index.len(), cols, data)?;
        Ok(self
            .tape
            .record(out, Op::GatherRows(self.id, Rc::from(index))))
    }

    /// `out[v] = x[v] + Σ x[u]` over directed pairs `(u, v)`.
    pub fn aggregate(&self, pairs: &[(usize, usize)]) -> Result<Var<'t>> {
        let v = self.value();
        let (rows, _) = v.require_matrix("aggregate")?;
        let mut out = (*v).clone();
        for &(src, dst) in pairs {
            if src >= rows || dst >= rows {
                return Err(contract("aggregate edge endpoint out of range"));
            }
            let (s, d) = (v.row(src), out.row_mut(dst));
            for (o, x) in d.iter_mut().zip(s) {
                *o += x;
            }
        }
        Ok(self
            .tape
            .record(out, Op::Aggregate(self.id, Rc::from(pairs))))
    }

    /// Euclidean norm of every row, as a vector.
    pub fn l2_norm_rows(&self) -> Result<Var<'t>> {
        let v = self.value();
        let (rows, _) = v.require_matrix("l2_norm_rows")?;
        let out = (0..rows).map(|i| libm::sqrt(dot(v.row(i), v.row(i)))).collect();
        Ok(self.tape.record(Tensor::vector(out), Op::L2NormRows(self.id)))
    }

    /// Row-wise cosine similarity of two equally shaped matrices.
    ///
    /// Each norm is floored at [`COSINE_EPS`].
    pub fn cosine_rows(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let (a, b) = (self.value(), rhs.value());
        a.same_shape(&b, "cosine_similarity")?;
        let (rows, _) = a.require_matrix("cosine_similarity")?;
        let out = (0..rows)
            .map(|i| cosine(a.row(i), b.row(i)))
            .collect();
        Ok(self
            .tape
            .record(Tensor::vector(out), Op::CosineRows(self.id, rhs.id)))
    }

    /// Mean binary cross-entropy of logits against `targets`, over entries
    /// where `mask` is nonzero.
    pub fn bce_with_logits(&self, targets: &Tensor, mask: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        x.same_shape(targets, "bce_with_logits")?;
        x.same_shape(mask, "bce_with_logits")?;
        let count = mask.data().iter().filter(|&&m| m != 0.0).count();
        if count == 0 {
            return Err(contract("bce_with_logits: every entry is masked out"));
        }
        let count = count as f64;
        let mut total = 0.0;
        for ((&xi, &yi), &mi) in x.data().iter().zip(targets.data()).zip(mask.data()) {
            if mi != 0.0 {
                total += bce_logit(xi, yi);
            }
        }
        Ok(self.tape.record(
            Tensor::scalar(total / count),
            Op::BceWithLogits {
                logits: self.id,
                targets: Rc::new(targets.clone()),
                mask: Rc::new(mask.clone()),
                count,
            },
        ))
    }

    /// Forward identity whose output never carries gradient upstream.
    pub fn stop_gradient(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    /// Outputs `value` in the forward pass while passing the incoming
    /// gradient to `self` unchanged.
    pub fn straight_through(&self, value: Tensor) -> Result<Var<'t>> {
        self.value().same_shape(&value, "straight_through")?;
        Ok(self.tape.record(value, Op::StraightThrough(self.id)))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = libm::sqrt(dot(a, a)).max(COSINE_EPS);
    let nb = libm::sqrt(dot(b, b)).max(COSINE_EPS);
    dot(a, b) / (na * nb)
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, delta: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

/// Pushes the gradient `g` of `node` onto its inputs.
pub(crate) fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| &*nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            accumulate(grads, nodes, a, g.clone());
            accumulate(grads, nodes, b, g.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(grads, nodes, a, g.clone());
            accumulate(grads, nodes, b, g.map(|x| -x));
        }
        &Op::Mul(a, b) => {
            accumulate(grads, nodes, a, g.zip(val(b), |g, y| g * y));
            accumulate(grads, nodes, b, g.zip(val(a), |g, x| g * x));
        }
        &Op::SquaredError(a, b) => {
            let diff = val(a).zip(val(b), |x, y| 2.0 * (x - y));
            let ga = g.zip(&diff, |g, d| g * d);
            accumulate(grads, nodes, b, ga.map(|x| -x));
            accumulate(grads, nodes, a, ga);
        }
        &Op::Scale(a, c) => accumulate(grads, nodes, a, g.map(|x| x * c)),
        &Op::AddScalar(a) | &Op::StraightThrough(a) => accumulate(grads, nodes, a, g.clone()),
        &Op::AddRow(m, r) => {
            let cols = g.cols();
            let mut gr = vec![0.0; cols];
            for chunk in g.data().chunks(cols) {
                for (acc, x) in gr.iter_mut().zip(chunk) {
                    *acc += x;
                }
            }
            let gr = Tensor::new(val(r).shape().to_vec(), gr).expect("bias shape");
            accumulate(grads, nodes, m, g.clone());
            accumulate(grads, nodes, r, gr);
        }
        &Op::MatMul(a, b) => {
            if nodes[a].requires_grad {
                accumulate(grads, nodes, a, g.matmul_t(val(b)));
            }
            if nodes[b].requires_grad {
                accumulate(grads, nodes, b, val(a).t_matmul(g));
            }
        }
        &Op::ConcatCols(a, b) => {
            let ca = val(a).cols();
            let cb = val(b).cols();
            let rows = g.rows();
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for i in 0..rows {
                let row = g.row(i);
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            accumulate(grads, nodes, a, Tensor::matrix(rows, ca, ga).expect("concat"));
            accumulate(grads, nodes, b, Tensor::matrix(rows, cb, gb).expect("concat"));
        }
        &Op::Sigmoid(a) => {
            let d = g.zip(&node.value, |g, y| g * y * (1.0 - y));
            accumulate(grads, nodes, a, d);
        }
        &Op::Relu(a) => {
            let d = g.zip(val(a), |g, x| if x > 0.0 { g } else { 0.0 });
            accumulate(grads, nodes, a, d);
        }
        &Op::Abs(a) => {
            let d = g.zip(val(a), |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            });
            accumulate(grads, nodes, a, d);
        }
        &Op::Sum(a) => {
            accumulate(grads, nodes, a, Tensor::full(val(a).shape(), g.item()));
        }
        &Op::Mean(a) => {
            let n = val(a).len() as f64;
            accumulate(grads, nodes, a, Tensor::full(val(a).shape(), g.item() / n));
        }
        Op::SegmentSum(a, offsets) | Op::SegmentMean(a, offsets) => {
            let average = matches!(node.op, Op::SegmentMean(..));
            let input = val(*a);
            let cols = input.cols();
            let mut d = Tensor::zeros(input.shape());
            for s in 0..offsets.len() - 1 {
                let scale = if average {
                    1.0 / (offsets[s + 1] - offsets[s]) as f64
                } else {
                    1.0
                };
                let gs = g.row(s);
                for r in offsets[s]..offsets[s + 1] {
                    let row = &mut d.data_mut()[r * cols..(r + 1) * cols];
                    for (o, x) in row.iter_mut().zip(gs) {
                        *o = x * scale;
                    }
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::GatherRows(a, index) => {
            let mut d = Tensor::zeros(val(*a).shape());
            for (j, &i) in index.iter().enumerate() {
                let src = g.row(j);
                for (o, x) in d.row_mut(i).iter_mut().zip(src) {
                    *o += x;
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::Aggregate(a, pairs) => {
            let mut d = g.clone();
            for &(src, dst) in pairs.iter() {
                let gd = g.row(dst);
                for (o, x) in d.row_mut(src).iter_mut().zip(gd) {
                    *o += x;
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        &Op::L2NormRows(a) => {
            let x = val(a);
            let mut d = Tensor::zeros(x.shape());
            for i in 0..x.rows() {
                let n = node.value.data()[i];
                if n > 0.0 {
                    let gi = g.data()[i] / n;
                    for (o, v) in d.row_mut(i).iter_mut().zip(x.row(i)) {
                        *o = gi * v;
                    }
                }
            }
            accumulate(grads, nodes, a, d);
        }
        &Op::CosineRows(a, b) => {
            let (xa, xb) = (val(a), val(b));
            let mut da = Tensor::zeros(xa.shape());
            let mut db = Tensor::zeros(xb.shape());
            for i in 0..xa.rows() {
                let (ra, rb) = (xa.row(i), xb.row(i));
                let (la, lb) = (libm::sqrt(dot(ra, ra)), libm::sqrt(dot(rb, rb)));
                let (na, nb) = (la.max(COSINE_EPS), lb.max(COSINE_EPS));
                let s = node.value.data()[i];
                let gi = g.data()[i];
                // A floored norm is constant, so its derivative term vanishes.
                let ka = if la > COSINE_EPS { s / (la * la) } else { 0.0 };
                let kb = if lb > COSINE_EPS { s / (lb * lb) } else { 0.0 };
                let inv = 1.0 / (na * nb);
                for ((o, &x), &y) in da.row_mut(i).iter_mut().zip(ra).zip(rb) {
                    *o = gi * (y * inv - ka * x);
                }
                for ((o, &y), &x) in db.row_mut(i).iter_mut().zip(rb).zip(ra) {
                    *o = gi * (x * inv - kb * y);
                }
            }
            accumulate(grads, nodes, a, da);
            accumulate(grads, nodes, b, db);
        }
        Op::BceWithLogits {
            logits,
            targets,
            mask,
            count,
        } => {
            let x = val(*logits);
            let scale = g.item() / count;
            let data = x
                .data()
                .iter()
                .zip(targets.data())
                .zip(mask.data())
                .map(|((&xi, &yi), &mi)| {
                    if mi != 0.0 {
                        scale * (sigmoid(xi) - yi)
                    } else {
                        0.0
                    }
                })
                .collect();
            accumulate(
                grads,
                nodes,
                *logits,
                Tensor::new(x.shape().to_vec(), data).expect("bce shape"),
            );
        }
    }
}
