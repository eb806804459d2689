//! Reverse-mode differentiation over a linear tape of recorded ops.
//!
//! Parameters enter the tape as copies tagged with their index in the
//! caller's parameter slice; [`Tape::backward`] adds their gradients into
//! that slice. Gradient buffers are never cleared here.

use super::ops::{self, ConvGeom};
use super::{EngineError, Param, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    /// `sum(x ⊙ c)` for a constant `c`.
    DotConst {
        input: Var,
        weights: Vec<f32>,
    },
    Scale {
        input: Var,
        factor: f32,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::Conv2d { input, weight, bias, .. } | Op::Linear { input, weight, bias } => {
                [input, weight, bias].iter().any(|v| self.nodes[v.0].requires_grad)
            }
            Op::Relu(v) | Op::GlobalAvgPool(v) | Op::Softmax(v) => self.nodes[v.0].requires_grad,
            Op::MaxPool { input, .. }
            | Op::DotConst { input, .. }
            | Op::Scale { input, .. }
            | Op::CrossEntropy { logits: input, .. } => self.nodes[input.0].requires_grad,
            Op::Concat(vs) => vs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<(), EngineError> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(EngineError::UnknownVar(var.0))
        }
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Input whose gradient is reported by [`Tape::backward`].
    pub fn tracked_input(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Input);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Records parameter `index` of the slice later passed to `backward`.
    pub fn param(&mut self, index: usize, param: &Param) -> Var {
        let mut value = param.tensor.clone();
        value.clear_grad();
        self.push(value, Op::Param(index))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, EngineError> {
        for v in [input, weight, bias] {
            self.check(v)?;
        }
        let geom = ConvGeom::new(self.value(input).shape(), self.value(weight).shape(), stride, padding)?;
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, EngineError> {
        for v in [input, weight, bias] {
            self.check(v)?;
        }
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, EngineError> {
        self.check(input)?;
        let out = ops::relu(self.value(input));
        Ok(self.push(out, Op::Relu(input)))
    }

    pub fn maxpool2d(
        &mut self,
        input: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var, EngineError> {
        self.check(input)?;
        let (out, argmax) = ops::maxpool2d(self.value(input), kernel, stride, padding)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn global_avgpool(&mut self, input: Var) -> Result<Var, EngineError> {
        self.check(input)?;
        let out = ops::global_avgpool(self.value(input))?;
        Ok(self.push(out, Op::GlobalAvgPool(input)))
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, EngineError> {
        for v in inputs {
            self.check(*v)?;
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = ops::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(inputs.to_vec())))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var, EngineError> {
        self.check(input)?;
        let out = ops::softmax(self.value(input))?;
        Ok(self.push(out, Op::Softmax(input)))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, EngineError> {
        self.check(logits)?;
        let (loss, probs) = ops::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn dot_const(&mut self, input: Var, weights: &Tensor) -> Result<Var, EngineError> {
        self.check(input)?;
        let x = self.value(input);
        if x.numel() != weights.numel() {
            return Err(EngineError::ShapeMismatch {
                op: "dot_const",
                lhs: x.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::DotConst {
                input,
                weights: weights.data().to_vec(),
            },
        ))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Result<Var, EngineError> {
        self.check(input)?;
        let x = self.value(input);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect())?;
        Ok(self.push(out, Op::Scale { input, factor }))
    }

    /// Back-propagates from the scalar `loss`, adding into `params[i].tensor`
    /// gradients. Returns the gradient of every tracked input by var index.
    pub fn backward(&self, loss: Var, params: &mut [Param]) -> Result<Vec<Option<Vec<f32>>>, EngineError> {
        if !self.nodes.iter().any(|n| !matches!(n.op, Op::Input | Op::Param(_))) {
            return Err(EngineError::NoTape);
        }
        self.check(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(EngineError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        let accumulate = |grads: &mut Vec<Option<Vec<f32>>>, var: Var, delta: Vec<f32>| {
            if self.nodes[var.0].requires_grad {
                add_into(grads, var, delta);
            }
        };
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {
                    grads[idx] = Some(dy);
                }
                Op::Param(p) => {
                    let param = params.get_mut(*p).ok_or(EngineError::UnknownParam(*p))?;
                    if param.tensor.numel() != dy.len() {
                        return Err(EngineError::ShapeMismatch {
                            op: "backward param",
                            lhs: param.tensor.shape().to_vec(),
                            rhs: node.value.shape().to_vec(),
                        });
                    }
                    for (g, d) in param.tensor.grad_mut().iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::Conv2d { input, weight, bias, geom } => {
                    let mut dx = needs_grad(&self.nodes, *input).then(|| vec![0.0; self.value(*input).numel()]);
                    let mut dw = vec![0.0; self.value(*weight).numel()];
                    let mut db = vec![0.0; self.value(*bias).numel()];
                    ops::conv2d_backward(
                        geom,
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        &dy,
                        dx.as_deref_mut(),
                        &mut dw,
                        &mut db,
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *input, dx);
                    }
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Linear { input, weight, bias } => {
                    let xs = self.value(*input).shape();
                    let dims = (xs[0], xs[1], self.value(*weight).shape()[0]);
                    let mut dx = needs_grad(&self.nodes, *input).then(|| vec![0.0; self.value(*input).numel()]);
                    let mut dw = vec![0.0; self.value(*weight).numel()];
                    let mut db = vec![0.0; dims.2];
                    ops::linear_backward(
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        dims,
                        &dy,
                        dx.as_deref_mut(),
                        &mut dw,
                        &mut db,
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *input, dx);
                    }
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Relu(input) => {
                    let dx = node
                        .value
                        .data()
                        .iter()
                        .zip(&dy)
                        .map(|(y, d)| if *y > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::MaxPool { input, argmax } => {
                    let mut dx = vec![0.0; self.value(*input).numel()];
                    for (src, d) in argmax.iter().zip(&dy) {
                        dx[*src as usize] += d;
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::GlobalAvgPool(input) => {
                    let s = self.value(*input).shape();
                    let hw = s[2] * s[3];
                    let inv = 1.0 / hw as f32;
                    let mut dx = Vec::with_capacity(self.value(*input).numel());
                    for d in &dy {
                        dx.extend(std::iter::repeat_n(d * inv, hw));
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Concat(inputs) => {
                    let s = node.value.shape();
                    let (n, hw) = (s[0], s[2] * s[3]);
                    let total = s[1] * hw;
                    let mut offset = 0;
                    for v in inputs {
                        let len = self.value(*v).shape()[1] * hw;
                        let mut dx = Vec::with_capacity(n * len);
                        for b in 0..n {
                            dx.extend_from_slice(&dy[b * total + offset..b * total + offset + len]);
                        }
                        accumulate(&mut grads, *v, dx);
                        offset += len;
                    }
                }
                Op::Softmax(input) => {
                    let cols = node.value.shape()[1];
                    let mut dx = Vec::with_capacity(dy.len());
                    for (y, d) in node.value.data().chunks(cols).zip(dy.chunks(cols)) {
                        let dot: f32 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                        dx.extend(y.iter().zip(d).map(|(yi, di)| yi * (di - dot)));
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let cols = probs.shape()[1];
                    let scale = dy[0] / labels.len() as f32;
                    let mut dx = probs.data().to_vec();
                    for (row, &label) in dx.chunks_mut(cols).zip(labels) {
                        row[label] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    accumulate(&mut grads, *logits, dx);
                }
                Op::DotConst { input, weights } => {
                    let dx = weights.iter().map(|w| w * dy[0]).collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::Scale { input, factor } => {
                    let dx = dy.iter().map(|d| d * factor).collect();
                    accumulate(&mut grads, *input, dx);
                }
            }
        }
        Ok(grads)
    }
}

fn needs_grad(nodes: &[Node], var: Var) -> bool {
    nodes[var.0].requires_grad
}

fn add_into(grads: &mut [Option<Vec<f32>>], var: Var, delta: Vec<f32>) {
    match &mut grads[var.0] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}
