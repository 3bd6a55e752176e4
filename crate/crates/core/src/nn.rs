//! Parameters, buffers and the layer building blocks shared by the
//! graph-convolution and decoder modules.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::graph_conv::NeighborGraph;
use crate::ops::conv::ConvGeom;
use crate::ops::norm::{self, BnConfig};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Trainable tensor with a hierarchical, unique name such as
/// `stage3.gcam.gcb.fc1.weight`.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// Non-trainable named state (batch-norm running statistics).
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.names.insert(name.to_string(), self.names.len());
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name)?;
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        self.claim(&name)?;
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Copies gradients for every parameter bound in `binding`; unbound or
    /// unreached parameters get zero gradients.
    pub fn load_grads(&mut self, binding: &ParamBinding, grads: &Grads<T>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            let src = binding
                .vars
                .get(i)
                .copied()
                .flatten()
                .and_then(|v| grads.slice(v));
            match src {
                Some(g) => p.grad.data_mut().copy_from_slice(g),
                None => p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero()),
            }
        }
    }
}

/// Tape variables created for each parameter during one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ParamBinding {
    vars: Vec<Option<Var>>,
}

impl ParamBinding {
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars.get(id.0).copied().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Forward<'a, T> {
    pub tape: Tape<T>,
    store: &'a mut ParamStore<T>,
    vars: Vec<Option<Var>>,
    pub mode: Mode,
    pub bn: BnConfig,
    track_params: bool,
    graphs: Vec<Arc<NeighborGraph>>,
    replay: Option<Vec<Arc<NeighborGraph>>>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, mode: Mode) -> Self {
        let n = store.params.len();
        Forward {
            tape: Tape::new(),
            store,
            vars: vec![None; n],
            mode,
            bn: BnConfig::default(),
            track_params: true,
            graphs: Vec::new(),
            replay: None,
        }
    }

    /// Forward pass that records no parameter gradients.
    pub fn inference(store: &'a mut ParamStore<T>) -> Self {
        let mut f = Self::new(store, Mode::Eval);
        f.track_params = false;
        f
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = self
            .tape
            .leaf(self.store.params[id.0].value.clone(), self.track_params);
        self.vars[id.0] = Some(v);
        v
    }

    /// Neighbour graph number `i` of this pass: replayed when graphs were
    /// frozen, otherwise built by `build` and recorded.
    pub fn graph(
        &mut self,
        build: impl FnOnce() -> Result<NeighborGraph>,
    ) -> Result<Arc<NeighborGraph>> {
        let i = self.graphs.len();
        let g = match &self.replay {
            Some(frozen) => Arc::clone(frozen.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "pass requested graph {i} but only {} were frozen",
                    frozen.len()
                ))
            })?),
            None => Arc::new(build()?),
        };
        self.graphs.push(Arc::clone(&g));
        Ok(g)
    }

    /// Reuses previously recorded graphs instead of rebuilding them, making
    /// the pass a smooth function of its inputs.
    pub fn freeze_graphs(&mut self, graphs: Vec<Arc<NeighborGraph>>) {
        self.replay = Some(graphs);
    }

    /// Graphs used so far in this pass, in order.
    pub fn graphs(&self) -> &[Arc<NeighborGraph>] {
        &self.graphs
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn finish(self) -> (Tape<T>, ParamBinding) {
        (self.tape, ParamBinding { vars: self.vars })
    }
}

/// Fan-in scaled uniform initialisation bound, `1 / sqrt(fan_in)`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = fan_in_bound(in_channels * kernel * kernel);
        let w = Tensor::uniform(
            Shape::new(out_channels, in_channels, kernel, kernel),
            bound,
            rng,
        );
        let weight = store.add_param(format!("{name}.weight"), w)?;
        let bias = if bias {
            let b = Tensor::uniform(Shape::new(1, out_channels, 1, 1), bound, rng);
            Some(store.add_param(format!("{name}.bias"), b)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            geom: ConvGeom::new(stride, padding),
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn pointwise<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(store, name, in_channels, out_channels, 1, 1, 0, true, rng)
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.tape.conv2d(x, w, b, self.geom)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
            + if self.bias.is_some() {
                self.out_channels
            } else {
                0
            }
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl DepthwiseConv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = fan_in_bound(kernel * kernel);
        let weight = store.add_param(
            format!("{name}.weight"),
            Tensor::uniform(Shape::new(channels, 1, kernel, kernel), bound, rng),
        )?;
        let bias = store.add_param(
            format!("{name}.bias"),
            Tensor::uniform(Shape::new(1, channels, 1, 1), bound, rng),
        )?;
        Ok(DepthwiseConv2d {
            weight,
            bias,
            channels,
            kernel,
            padding: kernel / 2,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = f.param(self.bias);
        f.tape.depthwise_conv2d(x, w, Some(b), self.padding)
    }

    pub fn num_params(&self) -> usize {
        self.channels * self.kernel * self.kernel + self.channels
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let shape = Shape::new(1, channels, 1, 1);
        Ok(BatchNorm2d {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones(shape))?,
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(shape))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(shape))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(shape))?,
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        let bn = f.bn;
        match f.mode {
            Mode::Train => {
                let count = {
                    let s = f.tape.shape(x);
                    s.n() * s.plane()
                };
                let (y, mean, var) = f.tape.batchnorm_train(x, gamma, beta, bn.eps)?;
                let mut rm = f.store.buffers[self.running_mean.0].value.data().to_vec();
                let mut rv = f.store.buffers[self.running_var.0].value.data().to_vec();
                norm::update_running(&mut rm, &mut rv, &mean, &var, count, bn.momentum);
                f.store.buffers[self.running_mean.0]
                    .value
                    .data_mut()
                    .copy_from_slice(&rm);
                f.store.buffers[self.running_var.0]
                    .value
                    .data_mut()
                    .copy_from_slice(&rv);
                Ok(y)
            }
            Mode::Eval => {
                let rm = f.store.buffers[self.running_mean.0].value.data().to_vec();
                let rv = f.store.buffers[self.running_var.0].value.data().to_vec();
                f.tape.batchnorm_eval(x, gamma, beta, &rm, &rv, bn.eps)
            }
        }
    }

    /// Affine parameters only; running statistics are buffers.
    pub fn num_params(&self) -> usize {
        2 * self.channels
    }
}
