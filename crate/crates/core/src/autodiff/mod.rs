//! Reverse-mode differentiation over a Wengert tape of dense f64 arrays.
//!
//! The public primitive set is closed: add, sub, mul, scale, matmul,
//! concat/slice on the last axis, leaky_relu, mean, sum, l2_norm, square and
//! softmax cross entropy. No broadcasting; bias terms are written as rank-1
//! matmuls against a column of ones.
//!
//! The backward pass appends its adjoint computations to the same tape as
//! ordinary nodes, so a second backward pass differentiates through the
//! first. That is what makes the penalty on the critic's input-gradient norm
//! differentiable with respect to the critic parameters. A handful of
//! internal ops (transpose, guarded reciprocal, last-axis broadcast/reduce,
//! softmax, pad, scalar product) exist only to express those adjoints; they
//! are not part of the public surface.

mod grad;

pub use grad::GradNormResult;

use crate::array::{matmul, transpose, NumArray};
use crate::error::{CoreError, Result};

pub(crate) const SIMPLEX_TOL: f64 = 1e-9;

/// Index of a node on a tape. Only meaningful for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    /// Trainable leaf.
    Param,
    /// Data leaf; gradients may still be requested against it.
    Const,
    Add,
    Sub,
    Mul,
    Scale(f64),
    MatMul,
    ConcatLast,
    SliceLast { start: usize, len: usize },
    LeakyRelu { slope: f64 },
    Mean,
    Sum,
    L2NormLast,
    Square,
    SoftmaxCrossEntropy,
    // -- internal ops emitted by the backward pass --
    Transpose,
    /// 1/x where x != 0, else 0. Realizes the subgradient-0 choice for the
    /// norm at the origin.
    RecipOrZero,
    BroadcastLast { extent: usize },
    ReduceSumLast,
    Softmax,
    PadLast { start: usize, total: usize },
    /// array * scalar-node
    ScalarMul,
    /// d(leaky_relu)/dx as a value: 1 on x >= 0 (positive-side choice at the
    /// kink), slope below. Its own derivative is zero almost everywhere.
    LeakyReluGradMask { slope: f64 },
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) value: NumArray,
}

/// Append-only record of a forward computation. Single-threaded; run several
/// tapes on several threads if you want parallelism.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &NumArray {
        &self.nodes[id.0].value
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Param | Op::Const)
    }

    /// Insert a trainable leaf. Rejects non-finite values.
    pub fn param(&mut self, value: NumArray) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(CoreError::NonFinite { op: "param" });
        }
        Ok(self.push(Op::Param, vec![], value))
    }

    /// Insert a data leaf. Rejects non-finite values.
    pub fn constant(&mut self, value: NumArray) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(CoreError::NonFinite { op: "constant" });
        }
        Ok(self.push(Op::Const, vec![], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", Op::Mul, a, b)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(CoreError::NonFinite { op: "scale" });
        }
        self.check_finite("scale", a)?;
        Ok(self.push_eval(Op::Scale(factor), vec![a]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        self.check_finite("matmul", a)?;
        self.check_finite("matmul", b)?;
        Ok(self.push_eval(Op::MatMul, vec![a, b]))
    }

    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let compatible = !sa.is_empty()
            && sa.len() == sb.len()
            && sa[..sa.len() - 1] == sb[..sb.len() - 1];
        if !compatible {
            return Err(CoreError::ShapeMismatch {
                op: "concat_last",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        self.check_finite("concat_last", a)?;
        self.check_finite("concat_last", b)?;
        Ok(self.push_eval(Op::ConcatLast, vec![a, b]))
    }

    pub fn slice_last(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let sa = self.shape(a);
        let last = sa.last().copied().unwrap_or(0);
        if sa.is_empty() || len == 0 || start + len > last {
            return Err(CoreError::BadShape {
                op: "slice_last",
                expected: format!("start {start} + len {len} within last axis"),
                actual: sa.to_vec(),
            });
        }
        self.check_finite("slice_last", a)?;
        Ok(self.push_eval(Op::SliceLast { start, len }, vec![a]))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(CoreError::invalid(format!(
                "leaky_relu slope must lie in (0,1), got {slope}"
            )));
        }
        self.check_finite("leaky_relu", a)?;
        Ok(self.push_eval(Op::LeakyRelu { slope }, vec![a]))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).numel() == 0 {
            return Err(CoreError::BadShape {
                op: "mean",
                expected: "non-empty array".into(),
                actual: self.shape(a).to_vec(),
            });
        }
        self.check_finite("mean", a)?;
        Ok(self.push_eval(Op::Mean, vec![a]))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_finite("sum", a)?;
        Ok(self.push_eval(Op::Sum, vec![a]))
    }

    /// L2 norm along the last axis: `[d] -> scalar`, `[n,d] -> [n]`.
    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        if self.shape(a).is_empty() {
            return Err(CoreError::BadShape {
                op: "l2_norm",
                expected: "rank >= 1".into(),
                actual: vec![],
            });
        }
        self.check_finite("l2_norm", a)?;
        Ok(self.push_eval(Op::L2NormLast, vec![a]))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_finite("square", a)?;
        Ok(self.push_eval(Op::Square, vec![a]))
    }

    /// Mean-reduced softmax cross entropy. `logits` and `targets` are
    /// `[n, k]`; each target row must lie in the probability simplex
    /// (one-hot in ordinary use).
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let (sl, st) = (self.shape(logits), self.shape(targets));
        if sl.len() != 2 || sl != st || sl[0] == 0 {
            return Err(CoreError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: sl.to_vec(),
                right: st.to_vec(),
            });
        }
        self.check_finite("softmax_cross_entropy", logits)?;
        self.check_finite("softmax_cross_entropy", targets)?;
        let t = self.value(targets);
        let k = st[1];
        for row in 0..st[0] {
            let r = &t.data()[row * k..(row + 1) * k];
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || r.iter().any(|&v| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v)) {
                return Err(CoreError::NotInSimplex { row, sum });
            }
        }
        Ok(self.push_eval(Op::SoftmaxCrossEntropy, vec![logits, targets]))
    }

    /// Recompute every non-leaf value from the recorded ops. The result is
    /// bit-identical to the stored values; used to validate tape integrity.
    pub fn replay(&self) -> Vec<NumArray> {
        let mut values: Vec<NumArray> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Param | Op::Const => node.value.clone(),
                _ => {
                    let inputs: Vec<&NumArray> =
                        node.inputs.iter().map(|id| &values[id.0]).collect();
                    eval_op(&node.op, &inputs)
                }
            };
            values.push(v);
        }
        values
    }

    pub(crate) fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn check_finite(&self, op: &'static str, id: NodeId) -> Result<()> {
        if self.value(id).is_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite { op })
        }
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        op: Op,
        a: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(CoreError::ShapeMismatch {
                op: name,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        self.check_finite(name, a)?;
        self.check_finite(name, b)?;
        Ok(self.push_eval(op, vec![a, b]))
    }

    /// Evaluate and append; used by public ops after validation and by the
    /// backward pass directly (its operands are valid by construction).
    pub(crate) fn push_eval(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        let operands: Vec<&NumArray> = inputs.iter().map(|id| self.value(*id)).collect();
        let value = eval_op(&op, &operands);
        self.push(op, inputs, value)
    }

    pub(crate) fn push_const(&mut self, value: NumArray) -> NodeId {
        self.push(Op::Const, vec![], value)
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: NumArray) -> NodeId {
        debug_assert!(inputs.iter().all(|id| id.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs, value });
        NodeId(self.nodes.len() - 1)
    }
}

/// Names for the closed public primitive set, for table-driven tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    ConcatLast,
    SliceLast,
    LeakyRelu,
    Mean,
    Sum,
    L2Norm,
    Square,
    SoftmaxCrossEntropy,
}

pub(crate) fn eval_op(op: &Op, inputs: &[&NumArray]) -> NumArray {
    match op {
        Op::Param | Op::Const => unreachable!("leaves carry their own values"),
        Op::Add => zip_elementwise(inputs[0], inputs[1], |a, b| a + b),
        Op::Sub => zip_elementwise(inputs[0], inputs[1], |a, b| a - b),
        Op::Mul => zip_elementwise(inputs[0], inputs[1], |a, b| a * b),
        Op::Scale(c) => inputs[0].map(|v| v * c),
        Op::MatMul => matmul(inputs[0], inputs[1]),
        Op::Transpose => transpose(inputs[0]),
        Op::ConcatLast => concat_last(inputs[0], inputs[1]),
        Op::SliceLast { start, len } => slice_last(inputs[0], *start, *len),
        Op::PadLast { start, total } => pad_last(inputs[0], *start, *total),
        Op::LeakyRelu { slope } => inputs[0].map(|v| if v >= 0.0 { v } else { slope * v }),
        Op::LeakyReluGradMask { slope } => inputs[0].map(|v| if v >= 0.0 { 1.0 } else { *slope }),
        Op::Mean => {
            let n = inputs[0].numel() as f64;
            NumArray::scalar(inputs[0].data().iter().sum::<f64>() / n)
        }
        Op::Sum => NumArray::scalar(inputs[0].data().iter().sum::<f64>()),
        Op::L2NormLast => {
            let d = inputs[0].last_extent();
            reduce_last(inputs[0], d, |row| {
                row.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
        }
        Op::Square => inputs[0].map(|v| v * v),
        Op::RecipOrZero => inputs[0].map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }),
        Op::BroadcastLast { extent } => {
            let x = inputs[0];
            let mut shape = x.shape().to_vec();
            shape.push(*extent);
            let mut data = Vec::with_capacity(x.numel() * extent);
            for &v in x.data() {
                data.extend(std::iter::repeat(v).take(*extent));
            }
            NumArray::new(shape, data).expect("broadcast shape")
        }
        Op::ReduceSumLast => {
            let d = inputs[0].last_extent();
            reduce_last(inputs[0], d, |row| row.iter().sum::<f64>())
        }
        Op::ScalarMul => {
            let s = inputs[1].item();
            inputs[0].map(|v| v * s)
        }
        Op::Softmax => softmax_rows(inputs[0]),
        Op::SoftmaxCrossEntropy => {
            let (logits, targets) = (inputs[0], inputs[1]);
            let (n, k) = (logits.shape()[0], logits.shape()[1]);
            let mut total = 0.0;
            for r in 0..n {
                let row = &logits.data()[r * k..(r + 1) * k];
                let trow = &targets.data()[r * k..(r + 1) * k];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                let dot: f64 = row.iter().zip(trow).map(|(x, t)| x * t).sum();
                total += lse - dot;
            }
            NumArray::scalar(total / n as f64)
        }
    }
}

fn zip_elementwise(a: &NumArray, b: &NumArray, f: impl Fn(f64, f64) -> f64) -> NumArray {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    NumArray::new(a.shape().to_vec(), data).expect("same shape")
}

fn concat_last(a: &NumArray, b: &NumArray) -> NumArray {
    let (da, db) = (a.last_extent(), b.last_extent());
    let rows = a.numel() / da;
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = da + db;
    let mut data = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        data.extend_from_slice(&a.data()[r * da..(r + 1) * da]);
        data.extend_from_slice(&b.data()[r * db..(r + 1) * db]);
    }
    NumArray::new(shape, data).expect("concat shape")
}

fn slice_last(a: &NumArray, start: usize, len: usize) -> NumArray {
    let d = a.last_extent();
    let rows = a.numel() / d;
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&a.data()[r * d + start..r * d + start + len]);
    }
    NumArray::new(shape, data).expect("slice shape")
}

fn pad_last(a: &NumArray, start: usize, total: usize) -> NumArray {
    let d = a.last_extent();
    let rows = a.numel() / d;
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = total;
    let mut data = vec![0.0; rows * total];
    for r in 0..rows {
        data[r * total + start..r * total + start + d]
            .copy_from_slice(&a.data()[r * d..(r + 1) * d]);
    }
    NumArray::new(shape, data).expect("pad shape")
}

fn reduce_last(a: &NumArray, d: usize, f: impl Fn(&[f64]) -> f64) -> NumArray {
    let rows = a.numel() / d;
    let shape = a.shape()[..a.shape().len() - 1].to_vec();
    let data = (0..rows).map(|r| f(&a.data()[r * d..(r + 1) * d])).collect();
    NumArray::new(shape, data).expect("reduce shape")
}

fn softmax_rows(x: &NumArray) -> NumArray {
    let d = x.last_extent();
    let rows = x.numel() / d;
    let mut data = vec![0.0; x.numel()];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (out, &v) in data[r * d..(r + 1) * d].iter_mut().zip(row) {
            *out = (v - m).exp();
            denom += *out;
        }
        for out in &mut data[r * d..(r + 1) * d] {
            *out /= denom;
        }
    }
    NumArray::new(x.shape().to_vec(), data).expect("softmax shape")
}
