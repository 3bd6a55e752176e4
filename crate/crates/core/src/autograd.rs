//! Reverse-mode differentiation over a linear tape of tensor ops.
//!
//! Every forward op appends one node holding its output and whatever the
//! backward rule needs. `backward` walks the nodes in reverse order of
//! execution and accumulates gradients into each node's inputs.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::graph_conv::aggregate;
use crate::graph_conv::NeighborGraph;
use crate::ops::conv::{self, ConvGeom};
use crate::ops::norm;
use crate::ops::pointwise::{self, gelu_grad_scalar};
use crate::ops::spatial::{self, ChannelReduce, UpsampleMode};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Upsample {
        x: Var,
        factor: usize,
        mode: UpsampleMode,
    },
    Reduce {
        x: Var,
        kind: ChannelReduce,
        arg: Vec<u32>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulMask {
        x: Var,
        mask: Var,
    },
    Concat(Var, Var),
    AvgPool {
        x: Var,
        r: usize,
    },
    Scale {
        x: Var,
        c: T,
    },
    OnePlusScale {
        x: Var,
        s: Var,
    },
    Sum(Var),
    Dot {
        x: Var,
        w: Tensor<T>,
    },
    GatherMax {
        cand: Var,
        arg: Vec<u32>,
    },
    GatherSum {
        cand: Var,
        graph: Arc<NeighborGraph>,
    },
    EdgeFeatures {
        x: Var,
        cand: Var,
        graph: Arc<NeighborGraph>,
    },
    MaxLast {
        x: Var,
        arg: Vec<u32>,
    },
    Reshape(Var),
    /// Scalar whose gradient w.r.t. `x` was computed alongside its value.
    Fused {
        x: Var,
        dx: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_vec(self.shapes[v.0], g.clone()).expect("grad shape"))
    }

    pub fn slice(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Hash of every branch decision taken by the non-smooth ops (ReLU
    /// signs and max selections). Two passes with equal signatures lie in
    /// the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    i.hash(&mut h);
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::Reduce {
                    kind: ChannelReduce::Max,
                    arg,
                    ..
                }
                | Op::GatherMax { arg, .. }
                | Op::MaxLast { arg, .. } => {
                    i.hash(&mut h);
                    arg.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Input node. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: usize,
    ) -> Result<Var> {
        let out = conv::depthwise_conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            padding,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Depthwise { x, w, b, padding }, &inputs))
    }

    /// Batch-statistics normalisation. Returns the output and the batch
    /// mean and biased variance so the caller can update running stats.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let f = norm::batchnorm_train(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat: f.xhat,
            inv_std: f.inv_std,
            train: true,
        };
        Ok((
            self.push(f.out, op, &[x, gamma, beta]),
            f.batch_mean,
            f.batch_var,
        ))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let f = norm::batchnorm_eval(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
            eps,
        )?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat: f.xhat,
            inv_std: f.inv_std,
            train: false,
        };
        Ok(self.push(f.out, op, &[x, gamma, beta]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = pointwise::relu(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = pointwise::gelu(self.value(x));
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = pointwise::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn softmax_channel(&mut self, x: Var) -> Var {
        let out = pointwise::softmax_channel(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Upsampling by `factor`; bilinear requires a power of two and is
    /// applied as repeated 2x steps.
    pub fn upsample(&mut self, x: Var, factor: usize, mode: UpsampleMode) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument(
                "upsample factor must be >= 1".into(),
            ));
        }
        if factor == 1 {
            return Ok(x);
        }
        match mode {
            UpsampleMode::Nearest => {
                let out = spatial::upsample_nearest(self.value(x), factor);
                Ok(self.push(out, Op::Upsample { x, factor, mode }, &[x]))
            }
            UpsampleMode::Bilinear => {
                if !factor.is_power_of_two() {
                    return Err(Error::InvalidArgument(format!(
                        "bilinear upsampling needs a power-of-two factor, got {factor}"
                    )));
                }
                let mut cur = x;
                for _ in 0..factor.trailing_zeros() {
                    let out = spatial::upsample_bilinear2x(self.value(cur));
                    cur = self.push(
                        out,
                        Op::Upsample {
                            x: cur,
                            factor: 2,
                            mode,
                        },
                        &[cur],
                    );
                }
                Ok(cur)
            }
        }
    }

    pub fn channel_reduce(&mut self, x: Var, kind: ChannelReduce) -> Var {
        let (out, arg) = spatial::channel_reduce(self.value(x), kind);
        self.push(out, Op::Reduce { x, kind, arg }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = pointwise::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = pointwise::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = pointwise::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Hadamard product with a `(n, 1, h, w)` mask broadcast over channels.
    pub fn mul_mask(&mut self, x: Var, mask: Var) -> Result<Var> {
        let out = pointwise::mul_broadcast_channel(self.value(x), self.value(mask))?;
        Ok(self.push(out, Op::MulMask { x, mask }, &[x, mask]))
    }

    pub fn concat_channel(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = pointwise::concat_channel(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    pub fn avgpool2d(&mut self, x: Var, r: usize) -> Result<Var> {
        if r == 1 {
            return Ok(x);
        }
        let out = spatial::avgpool2d(self.value(x), r)?;
        Ok(self.push(out, Op::AvgPool { x, r }, &[x]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c }, &[x])
    }

    /// `(1 + s) * x` for a one-element tensor `s`.
    pub fn one_plus_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err(
                "one_plus_scale",
                format!("scale {:?} is not a scalar", self.shape(s)),
            ));
        }
        let f = T::one() + self.value(s).item();
        let out = self.value(x).map(|v| v * f);
        Ok(self.push(out, Op::OnePlusScale { x, s }, &[x, s]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `sum(x * w)` against a constant tensor.
    pub fn dot_const(&mut self, x: Var, w: Tensor<T>) -> Result<Var> {
        self.value(x).check_same_shape(&w, "dot_const")?;
        let v: T = self
            .value(x)
            .data()
            .iter()
            .zip(w.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(v), Op::Dot { x, w }, &[x]))
    }

    pub fn gather_max(&mut self, cand: Var, graph: &Arc<NeighborGraph>) -> Result<Var> {
        let (out, arg) = aggregate::gather_max(self.value(cand), graph)?;
        Ok(self.push(out, Op::GatherMax { cand, arg }, &[cand]))
    }

    pub fn gather_sum(&mut self, cand: Var, graph: &Arc<NeighborGraph>) -> Result<Var> {
        let out = aggregate::gather_sum(self.value(cand), graph)?;
        Ok(self.push(
            out,
            Op::GatherSum {
                cand,
                graph: Arc::clone(graph),
            },
            &[cand],
        ))
    }

    pub fn edge_features(&mut self, x: Var, cand: Var, graph: &Arc<NeighborGraph>) -> Result<Var> {
        let out = aggregate::edge_features(self.value(x), self.value(cand), graph)?;
        Ok(self.push(
            out,
            Op::EdgeFeatures {
                x,
                cand,
                graph: Arc::clone(graph),
            },
            &[x, cand],
        ))
    }

    pub fn max_last_axis(&mut self, x: Var) -> Var {
        let (out, arg) = aggregate::max_last_axis(self.value(x));
        self.push(out, Op::MaxLast { x, arg }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Records a scalar computed outside the tape together with its
    /// gradient with respect to `x`.
    pub fn fused_scalar(&mut self, x: Var, value: T, dx: Vec<T>) -> Result<Var> {
        if dx.len() != self.value(x).numel() {
            return Err(shape_err(
                "fused_scalar",
                "gradient length differs from input",
            ));
        }
        Ok(self.push(Tensor::scalar(value), Op::Fused { x, dx }, &[x]))
    }

    /// Gradients of the one-element `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(Error::NonScalarLoss(shape.0));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads {
            grads,
            shapes: self.nodes[..=loss.0]
                .iter()
                .map(|n| n.value.shape())
                .collect(),
        })
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let gt = || Tensor::from_vec(node.value.shape(), g.to_vec()).expect("grad shape");
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    &gt(),
                    *geom,
                    self.tracked(*x),
                    self.tracked(*w),
                );
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx.data());
                }
                if let Some(gw) = gw {
                    accumulate(grads, *w, gw.data());
                }
                if let Some(b) = b {
                    if self.tracked(*b) {
                        accumulate(grads, *b, gb.data());
                    }
                }
            }
            Op::Depthwise { x, w, b, padding } => {
                let (gx, gw, gb) = conv::depthwise_conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    &gt(),
                    *padding,
                );
                self.acc_if(grads, *x, gx.data());
                self.acc_if(grads, *w, gw.data());
                if let Some(b) = b {
                    self.acc_if(grads, *b, gb.data());
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (dx, dg, db) = norm::batchnorm_backward(
                    &gt(),
                    xhat,
                    inv_std,
                    self.value(*gamma).data(),
                    *train,
                );
                self.acc_if(grads, *x, dx.data());
                self.acc_if(grads, *gamma, &dg);
                self.acc_if(grads, *beta, &db);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d: Vec<T> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let d: Vec<T> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| gv * gelu_grad_scalar(v))
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let d: Vec<T> = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::Softmax(x) => {
                let d = pointwise::softmax_channel_backward(&node.value, g);
                accumulate(grads, *x, &d);
            }
            Op::Upsample { x, factor, mode } => {
                let d = match mode {
                    UpsampleMode::Nearest => spatial::upsample_nearest_backward(&gt(), *factor),
                    UpsampleMode::Bilinear => spatial::upsample_bilinear2x_backward(&gt()),
                };
                accumulate(grads, *x, d.data());
            }
            Op::Reduce { x, kind, arg } => {
                let d = spatial::channel_reduce_backward(&gt(), self.shape(*x), *kind, arg);
                accumulate(grads, *x, d.data());
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, g);
                self.acc_if(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, g);
                if self.tracked(*b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    let d: Vec<T> = g
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&gv, &v)| gv * v)
                        .collect();
                    accumulate(grads, *a, &d);
                }
                if self.tracked(*b) {
                    let d: Vec<T> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&gv, &v)| gv * v)
                        .collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::MulMask { x, mask } => {
                let mv = self.value(*mask);
                let xv = self.value(*x);
                let [n, c, _, _] = xv.shape().0;
                let p = xv.shape().plane();
                if self.tracked(*x) {
                    let gm = pointwise::mul_broadcast_channel(&gt(), mv).expect("mask shape");
                    accumulate(grads, *x, gm.data());
                }
                if self.tracked(*mask) {
                    let mut d = vec![T::zero(); n * p];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * p;
                            for i in 0..p {
                                d[b * p + i] += g[base + i] * xv.data()[base + i];
                            }
                        }
                    }
                    accumulate(grads, *mask, &d);
                }
            }
            Op::Concat(a, b) => {
                let (ga, gb) = pointwise::split_channel(g, self.shape(*a), self.shape(*b));
                self.acc_if(grads, *a, &ga);
                self.acc_if(grads, *b, &gb);
            }
            Op::AvgPool { x, r } => {
                let d = spatial::avgpool2d_backward(&gt(), *r);
                accumulate(grads, *x, d.data());
            }
            Op::Scale { x, c } => {
                let d: Vec<T> = g.iter().map(|&v| v * *c).collect();
                accumulate(grads, *x, &d);
            }
            Op::OnePlusScale { x, s } => {
                let f = T::one() + self.value(*s).item();
                if self.tracked(*x) {
                    let d: Vec<T> = g.iter().map(|&v| v * f).collect();
                    accumulate(grads, *x, &d);
                }
                if self.tracked(*s) {
                    let ds: T = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&a, &b)| a * b)
                        .sum();
                    accumulate(grads, *s, &[ds]);
                }
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).numel()];
                accumulate(grads, *x, &d);
            }
            Op::Dot { x, w } => {
                let d: Vec<T> = w.data().iter().map(|&v| v * g[0]).collect();
                accumulate(grads, *x, &d);
            }
            Op::GatherMax { cand, arg } => {
                let d = aggregate::gather_max_backward(&gt(), self.shape(*cand), arg);
                accumulate(grads, *cand, d.data());
            }
            Op::GatherSum { cand, graph } => {
                let d = aggregate::gather_sum_backward(&gt(), self.shape(*cand), graph);
                accumulate(grads, *cand, d.data());
            }
            Op::EdgeFeatures { x, cand, graph } => {
                let (gx, gc) = aggregate::edge_features_backward(
                    &gt(),
                    self.shape(*x),
                    self.shape(*cand),
                    graph,
                );
                self.acc_if(grads, *x, gx.data());
                self.acc_if(grads, *cand, gc.data());
            }
            Op::MaxLast { x, arg } => {
                let d = aggregate::max_last_axis_backward(&gt(), self.shape(*x), arg);
                accumulate(grads, *x, d.data());
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Fused { x, dx } => {
                let d: Vec<T> = dx.iter().map(|&v| v * g[0]).collect();
                accumulate(grads, *x, &d);
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        if self.tracked(v) {
            accumulate(grads, v, g);
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, -2.0, 0.5]).unwrap();
        let w = tape.leaf(
            Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.3, 0.1, 2.0]).unwrap(),
            true,
        );
        let xv = tape.constant(x.clone());
        let prod = tape.hadamard(w, xv).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), x);
        assert!(grads.get(xv).is_none());
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::ones(Shape::new(1, 2, 1, 1)), true);
        let z = tape.scale(w, 0.0);
        let loss = tape.sum(z);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(Tensor::ones(Shape::new(1, 2, 1, 1)), true);
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn reused_node_accumulates() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(Shape::scalar(), 3.0), true);
        let sq = tape.hadamard(a, a).unwrap();
        let grads = tape.backward(sq).unwrap();
        assert_eq!(grads.get(a).unwrap().item(), 6.0);
    }
}
