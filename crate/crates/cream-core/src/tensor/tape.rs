//! Recording tape for reverse-mode differentiation.
//!
//! Forward calls record one entry per kernel invocation; `backward` replays
//! them in reverse order, accumulating cotangents into every input node's
//! gradient slot. A tensor feeding several consumers receives the sum of all
//! their contributions. The tape is rebuilt per batch (define-by-run).

use super::conv::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvParams};
use super::elem::{add, add_backward, concat_channels, concat_channels_backward, relu, relu_backward};
use super::pool::{maxpool2x2, maxpool2x2_backward};
use super::{Dims4, Scalar, ShapeError, Tensor4};

/// Handle to a tensor stored on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op {
    Conv2d {
        x: ValueId,
        k: ValueId,
        b: ValueId,
        out: ValueId,
        stride: (usize, usize),
        padding: (usize, usize),
    },
    Deconv2d {
        x: ValueId,
        k: ValueId,
        b: ValueId,
        out: ValueId,
        stride: (usize, usize),
        padding: (usize, usize),
    },
    MaxPool {
        x: ValueId,
        out: ValueId,
        argmax: Vec<u32>,
    },
    Relu {
        x: ValueId,
        out: ValueId,
    },
    Add {
        a: ValueId,
        b: ValueId,
        out: ValueId,
    },
    Concat {
        a: ValueId,
        b: ValueId,
        out: ValueId,
        c_a: usize,
    },
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Tensor4<T>>,
    ops: Vec<Op>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, t: Tensor4<T>) -> ValueId {
        self.nodes.push(t);
        ValueId(self.nodes.len() - 1)
    }

    /// Register a bias vector as a (1, len, 1, 1) leaf.
    pub fn bias_leaf(&mut self, bias: &[T]) -> ValueId {
        let t = Tensor4::new(Dims4::new(1, bias.len(), 1, 1), bias.to_vec())
            .expect("bias leaf dims");
        self.leaf(t)
    }

    pub fn value(&self, id: ValueId) -> &Tensor4<T> {
        &self.nodes[id.0]
    }

    pub fn grad(&self, id: ValueId) -> Option<&[T]> {
        self.nodes[id.0].grad()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_out(&mut self, t: Tensor4<T>) -> ValueId {
        self.nodes.push(t);
        ValueId(self.nodes.len() - 1)
    }

    fn conv_params(&self, k: ValueId, b: ValueId, stride: (usize, usize), padding: (usize, usize)) -> ConvParams<T> {
        ConvParams {
            kernel: self.nodes[k.0].clone(),
            bias: self.nodes[b.0].data().to_vec(),
            stride,
            padding,
        }
    }

    pub fn conv2d(
        &mut self,
        x: ValueId,
        k: ValueId,
        b: ValueId,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<ValueId, ShapeError> {
        let p = self.conv_params(k, b, stride, padding);
        let y = conv2d(&self.nodes[x.0], &p)?;
        let out = self.push_out(y);
        self.ops.push(Op::Conv2d {
            x,
            k,
            b,
            out,
            stride,
            padding,
        });
        Ok(out)
    }

    pub fn deconv2d(
        &mut self,
        x: ValueId,
        k: ValueId,
        b: ValueId,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<ValueId, ShapeError> {
        let p = self.conv_params(k, b, stride, padding);
        let y = deconv2d(&self.nodes[x.0], &p)?;
        let out = self.push_out(y);
        self.ops.push(Op::Deconv2d {
            x,
            k,
            b,
            out,
            stride,
            padding,
        });
        Ok(out)
    }

    pub fn maxpool2x2(&mut self, x: ValueId) -> Result<ValueId, ShapeError> {
        let (y, argmax) = maxpool2x2(&self.nodes[x.0])?;
        let out = self.push_out(y);
        self.ops.push(Op::MaxPool { x, out, argmax });
        Ok(out)
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let y = relu(&self.nodes[x.0]);
        let out = self.push_out(y);
        self.ops.push(Op::Relu { x, out });
        out
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, ShapeError> {
        let y = add(&self.nodes[a.0], &self.nodes[b.0])?;
        let out = self.push_out(y);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn concat_channels(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, ShapeError> {
        let c_a = self.nodes[a.0].dims().c;
        let y = concat_channels(&self.nodes[a.0], &self.nodes[b.0])?;
        let out = self.push_out(y);
        self.ops.push(Op::Concat { a, b, out, c_a });
        Ok(out)
    }

    fn accumulate(&mut self, id: ValueId, contribution: &[T]) {
        let grad = self.nodes[id.0].ensure_grad();
        debug_assert_eq!(grad.len(), contribution.len());
        for (g, &c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn out_grad(&self, out: ValueId) -> Option<Tensor4<T>> {
        let node = &self.nodes[out.0];
        node.grad()
            .map(|g| Tensor4::new(node.dims(), g.to_vec()).expect("grad dims"))
    }

    /// Seed `at` with `seed_grad` and propagate through all recorded ops in
    /// reverse order.
    pub fn backward(&mut self, at: ValueId, seed_grad: &Tensor4<T>) -> Result<(), ShapeError> {
        if self.nodes[at.0].dims() != seed_grad.dims() {
            return Err(ShapeError::Mismatch {
                op: "tape_backward",
                lhs: self.nodes[at.0].dims().to_string(),
                rhs: seed_grad.dims().to_string(),
            });
        }
        self.accumulate(at, seed_grad.data());

        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            match op {
                Op::Conv2d {
                    x,
                    k,
                    b,
                    out,
                    stride,
                    padding,
                } => {
                    if let Some(g) = self.out_grad(*out) {
                        let p = self.conv_params(*k, *b, *stride, *padding);
                        let (gi, gk, gb) = conv2d_backward(&g, &self.nodes[x.0], &p)?;
                        self.accumulate(*x, gi.data());
                        self.accumulate(*k, gk.data());
                        self.accumulate(*b, &gb);
                    }
                }
                Op::Deconv2d {
                    x,
                    k,
                    b,
                    out,
                    stride,
                    padding,
                } => {
                    if let Some(g) = self.out_grad(*out) {
                        let p = self.conv_params(*k, *b, *stride, *padding);
                        let (gi, gk, gb) = deconv2d_backward(&g, &self.nodes[x.0], &p)?;
                        self.accumulate(*x, gi.data());
                        self.accumulate(*k, gk.data());
                        self.accumulate(*b, &gb);
                    }
                }
                Op::MaxPool { x, out, argmax } => {
                    if let Some(g) = self.out_grad(*out) {
                        let gi = maxpool2x2_backward(&g, self.nodes[x.0].dims(), argmax)?;
                        self.accumulate(*x, gi.data());
                    }
                }
                Op::Relu { x, out } => {
                    if let Some(g) = self.out_grad(*out) {
                        let gi = relu_backward(&g, &self.nodes[x.0])?;
                        self.accumulate(*x, gi.data());
                    }
                }
                Op::Add { a, b, out } => {
                    if let Some(g) = self.out_grad(*out) {
                        let (ga, gb) = add_backward(&g);
                        self.accumulate(*a, ga.data());
                        self.accumulate(*b, gb.data());
                    }
                }
                Op::Concat { a, b, out, c_a } => {
                    if let Some(g) = self.out_grad(*out) {
                        let (ga, gb) = concat_channels_backward(&g, *c_a)?;
                        self.accumulate(*a, ga.data());
                        self.accumulate(*b, gb.data());
                    }
                }
            }
        }
        self.ops = ops;
        Ok(())
    }
}
