//! Backward pass. Adjoints are appended to the tape as ordinary nodes, so
//! gradients are themselves differentiable (double backward).

use super::{NodeId, Op, Tape};
use crate::array::NumArray;
use crate::error::{CoreError, Result};

/// Output of [`Tape::grad_of_gradnorm`].
#[derive(Debug)]
pub struct GradNormResult {
    /// d(norm of input-gradient)/d(param), one per requested parameter leaf.
    pub grads: Vec<NumArray>,
    /// Value of the input-gradient norm at the recorded point.
    pub input_grad_norm: f64,
    /// True when the input-gradient was exactly zero, in which case the
    /// subgradient 0 was returned for every parameter.
    pub zero_grad: bool,
}

impl Tape {
    /// Reverse-mode gradients of a scalar `output` with respect to leaf
    /// nodes. Leaves the output does not depend on get zero gradients.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NumArray>> {
        let ids = self.grad_nodes(output, wrt)?;
        Ok(ids.into_iter().map(|id| self.value(id).clone()).collect())
    }

    /// Like [`Tape::grad`] but returns tape nodes, so the result can be fed
    /// into further ops (and differentiated again).
    pub fn grad_nodes(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.value(output).is_scalar() {
            return Err(CoreError::NonScalarOutput(self.shape(output).to_vec()));
        }
        for &w in wrt {
            if !self.is_leaf(w) {
                return Err(CoreError::NotALeaf(w.0));
            }
        }

        let horizon = output.0 + 1;

        // Only nodes on a path from a requested leaf to the output need
        // adjoints; everything else is skipped.
        let mut needed = vec![false; horizon];
        for &w in wrt {
            if w.0 < horizon {
                needed[w.0] = true;
            }
        }
        for i in 0..horizon {
            if needed[i] {
                continue;
            }
            needed[i] = self.nodes[i].inputs.iter().any(|j| needed[j.0]);
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; horizon];
        if needed[output.0] {
            let seed = self.push_const(NumArray::scalar(1.0));
            adjoint[output.0] = Some(seed);
        }

        for i in (0..horizon).rev() {
            let Some(g) = adjoint[i] else { continue };
            if self.nodes[i].inputs.is_empty() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            let node = NodeId(i);
            for (slot, &input) in inputs.iter().enumerate() {
                if !needed[input.0] {
                    continue;
                }
                let Some(contribution) = self.vjp(&op, &inputs, node, g, slot) else {
                    continue;
                };
                adjoint[input.0] = Some(match adjoint[input.0] {
                    None => contribution,
                    Some(prev) => self.push_eval(Op::Add, vec![prev, contribution]),
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(id) => id,
                None => self.push_const(NumArray::zeros(self.shape(w).to_vec())),
            })
            .collect())
    }

    /// Derivative, with respect to parameter leaves, of the L2 norm of the
    /// critic's input-gradient: d/dparams of ||d output / d input||.
    ///
    /// `output` must be scalar and `input` a rank-1 leaf. At points where the
    /// input-gradient vanishes the norm is not differentiable; the
    /// subgradient 0 is returned and the event is flagged.
    pub fn grad_of_gradnorm(
        &mut self,
        output: NodeId,
        input: NodeId,
        params: &[NodeId],
    ) -> Result<GradNormResult> {
        if self.shape(input).len() != 1 {
            return Err(CoreError::BadShape {
                op: "grad_of_gradnorm",
                expected: "rank-1 input leaf".into(),
                actual: self.shape(input).to_vec(),
            });
        }
        let input_grad = self.grad_nodes(output, &[input])?[0];
        let norm = self.push_eval(Op::L2NormLast, vec![input_grad]);
        let norm_value = self.value(norm).item();
        let grads = self.grad(norm, params)?;
        Ok(GradNormResult {
            grads,
            input_grad_norm: norm_value,
            zero_grad: norm_value == 0.0,
        })
    }

    /// Adjoint contribution of `node`'s `slot`-th input. `g` is the adjoint
    /// of the node itself. Returns None when the derivative is identically
    /// zero (or zero almost everywhere, for the activation mask).
    fn vjp(
        &mut self,
        op: &Op,
        inputs: &[NodeId],
        node: NodeId,
        g: NodeId,
        slot: usize,
    ) -> Option<NodeId> {
        let id = match (op, slot) {
            (Op::Add, _) => g,
            (Op::Sub, 0) => g,
            (Op::Sub, 1) => self.push_eval(Op::Scale(-1.0), vec![g]),
            (Op::Mul, 0) => self.push_eval(Op::Mul, vec![g, inputs[1]]),
            (Op::Mul, 1) => self.push_eval(Op::Mul, vec![g, inputs[0]]),
            (Op::Scale(c), 0) => self.push_eval(Op::Scale(*c), vec![g]),
            (Op::MatMul, 0) => {
                let bt = self.push_eval(Op::Transpose, vec![inputs[1]]);
                self.push_eval(Op::MatMul, vec![g, bt])
            }
            (Op::MatMul, 1) => {
                let at = self.push_eval(Op::Transpose, vec![inputs[0]]);
                self.push_eval(Op::MatMul, vec![at, g])
            }
            (Op::Transpose, 0) => self.push_eval(Op::Transpose, vec![g]),
            (Op::ConcatLast, _) => {
                let da = self.value(inputs[0]).last_extent();
                let db = self.value(inputs[1]).last_extent();
                let (start, len) = if slot == 0 { (0, da) } else { (da, db) };
                self.push_eval(Op::SliceLast { start, len }, vec![g])
            }
            (Op::SliceLast { start, len: _ }, 0) => {
                let total = self.value(inputs[0]).last_extent();
                self.push_eval(Op::PadLast { start: *start, total }, vec![g])
            }
            (Op::PadLast { start, total: _ }, 0) => {
                let len = self.value(inputs[0]).last_extent();
                self.push_eval(Op::SliceLast { start: *start, len }, vec![g])
            }
            (Op::LeakyRelu { slope }, 0) => {
                let mask = self.push_eval(Op::LeakyReluGradMask { slope: *slope }, vec![inputs[0]]);
                self.push_eval(Op::Mul, vec![g, mask])
            }
            // Piecewise-constant in its input: derivative zero almost
            // everywhere.
            (Op::LeakyReluGradMask { .. }, 0) => return None,
            (Op::Mean, 0) => {
                let shape = self.shape(inputs[0]).to_vec();
                let n = self.value(inputs[0]).numel() as f64;
                let fill = self.push_const(NumArray::filled(shape, 1.0 / n));
                self.push_eval(Op::ScalarMul, vec![fill, g])
            }
            (Op::Sum, 0) => {
                let shape = self.shape(inputs[0]).to_vec();
                let fill = self.push_const(NumArray::filled(shape, 1.0));
                self.push_eval(Op::ScalarMul, vec![fill, g])
            }
            (Op::L2NormLast, 0) => {
                // d||x||/dx = x/||x|| rowwise; rows with zero norm get the
                // subgradient 0 through the guarded reciprocal.
                let d = self.value(inputs[0]).last_extent();
                let inv = self.push_eval(Op::RecipOrZero, vec![node]);
                let scaled = self.push_eval(Op::Mul, vec![g, inv]);
                let wide = self.push_eval(Op::BroadcastLast { extent: d }, vec![scaled]);
                self.push_eval(Op::Mul, vec![inputs[0], wide])
            }
            (Op::Square, 0) => {
                let two_x = self.push_eval(Op::Scale(2.0), vec![inputs[0]]);
                self.push_eval(Op::Mul, vec![g, two_x])
            }
            (Op::RecipOrZero, 0) => {
                // d(1/x)/dx = -1/x^2 = -y^2; the guarded zero case carries
                // through as 0.
                let y2 = self.push_eval(Op::Square, vec![node]);
                let gy2 = self.push_eval(Op::Mul, vec![g, y2]);
                self.push_eval(Op::Scale(-1.0), vec![gy2])
            }
            (Op::BroadcastLast { .. }, 0) => self.push_eval(Op::ReduceSumLast, vec![g]),
            (Op::ReduceSumLast, 0) => {
                let d = self.value(inputs[0]).last_extent();
                self.push_eval(Op::BroadcastLast { extent: d }, vec![g])
            }
            (Op::ScalarMul, 0) => self.push_eval(Op::ScalarMul, vec![g, inputs[1]]),
            (Op::ScalarMul, 1) => {
                let prod = self.push_eval(Op::Mul, vec![g, inputs[0]]);
                self.push_eval(Op::Sum, vec![prod])
            }
            (Op::Softmax, 0) => {
                // y * (g - rowsum(g*y))
                let d = self.value(inputs[0]).last_extent();
                let gy = self.push_eval(Op::Mul, vec![g, node]);
                let rs = self.push_eval(Op::ReduceSumLast, vec![gy]);
                let wide = self.push_eval(Op::BroadcastLast { extent: d }, vec![rs]);
                let centered = self.push_eval(Op::Sub, vec![g, wide]);
                self.push_eval(Op::Mul, vec![node, centered])
            }
            (Op::SoftmaxCrossEntropy, 0) => {
                // (softmax(logits) - targets) / n, scaled by the upstream
                // scalar adjoint.
                let n = self.shape(inputs[0])[0] as f64;
                let probs = self.push_eval(Op::Softmax, vec![inputs[0]]);
                let diff = self.push_eval(Op::Sub, vec![probs, inputs[1]]);
                let scaled = self.push_eval(Op::Scale(1.0 / n), vec![diff]);
                self.push_eval(Op::ScalarMul, vec![scaled, g])
            }
            // Targets are data; no gradient flows into them.
            (Op::SoftmaxCrossEntropy, 1) => return None,
            (Op::Param | Op::Const, _) => unreachable!("leaves have no inputs"),
            (op, slot) => unreachable!("no vjp for {op:?} slot {slot}"),
        };
        Some(id)
    }
}
