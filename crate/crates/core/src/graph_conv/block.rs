use std::sync::Arc;

use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, Forward, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::knn::{build_knn_graph, NeighborGraph};
use super::GraphConvVariant;

/// Graph size actually used on a grid with `candidates` candidate nodes:
/// dilation is capped at the candidate count and `k` at `candidates / d`.
pub fn effective_graph_size(k: usize, dilation: usize, candidates: usize) -> (usize, usize) {
    let d = dilation.clamp(1, candidates.max(1));
    let k = k.clamp(1, (candidates / d).max(1));
    (k, d)
}

/// Variant-specific weights of the aggregation step. All `W` are 1x1 convs.
#[derive(Debug, Clone)]
pub enum DynConv {
    MaxRelative { w: Conv2d },
    Edge { w: Conv2d },
    Sage { w1: Conv2d, w2: Conv2d },
    Gin { w: Conv2d, eps: ParamId },
}

impl DynConv {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        variant: GraphConvVariant,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = channels;
        Ok(match variant {
            GraphConvVariant::MaxRelative => DynConv::MaxRelative {
                w: Conv2d::pointwise(store, &format!("{name}.w"), 2 * c, c, rng)?,
            },
            GraphConvVariant::Edge => DynConv::Edge {
                w: Conv2d::pointwise(store, &format!("{name}.w"), 2 * c, c, rng)?,
            },
            GraphConvVariant::Sage => DynConv::Sage {
                w1: Conv2d::pointwise(store, &format!("{name}.w1"), c, c, rng)?,
                w2: Conv2d::pointwise(store, &format!("{name}.w2"), 2 * c, c, rng)?,
            },
            GraphConvVariant::Gin => DynConv::Gin {
                w: Conv2d::pointwise(store, &format!("{name}.w"), c, c, rng)?,
                eps: store.add_param(format!("{name}.eps"), Tensor::zeros(Shape::scalar()))?,
            },
        })
    }

    pub fn variant(&self) -> GraphConvVariant {
        match self {
            DynConv::MaxRelative { .. } => GraphConvVariant::MaxRelative,
            DynConv::Edge { .. } => GraphConvVariant::Edge,
            DynConv::Sage { .. } => GraphConvVariant::Sage,
            DynConv::Gin { .. } => GraphConvVariant::Gin,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            DynConv::MaxRelative { w } | DynConv::Edge { w } => w.num_params(),
            DynConv::Sage { w1, w2 } => w1.num_params() + w2.num_params(),
            DynConv::Gin { w, .. } => w.num_params() + 1,
        }
    }

    /// Node update for queries `x` against candidates `cand` (which equal
    /// `x` when no reduction is applied).
    pub fn forward<T: Scalar>(
        &self,
        f: &mut Forward<'_, T>,
        x: Var,
        cand: Var,
        graph: &Arc<NeighborGraph>,
    ) -> Result<Var> {
        match self {
            DynConv::MaxRelative { w } => {
                let nb_max = f.tape.gather_max(cand, graph)?;
                let rel = f.tape.sub(nb_max, x)?;
                let cat = f.tape.concat_channel(x, rel)?;
                w.forward(f, cat)
            }
            DynConv::Edge { w } => {
                let shape = f.tape.shape(x);
                let edges = f.tape.edge_features(x, cand, graph)?;
                let per_edge = w.forward(f, edges)?;
                let pooled = f.tape.max_last_axis(per_edge);
                f.tape.reshape(pooled, shape.with_c(w.out_channels))
            }
            DynConv::Sage { w1, w2 } => {
                let proj = w1.forward(f, cand)?;
                let nb_max = f.tape.gather_max(proj, graph)?;
                let cat = f.tape.concat_channel(x, nb_max)?;
                w2.forward(f, cat)
            }
            DynConv::Gin { w, eps } => {
                let e = f.param(*eps);
                let nb_sum = f.tape.gather_sum(cand, graph)?;
                let own = f.tape.one_plus_scale(x, e)?;
                let agg = f.tape.add(own, nb_sum)?;
                w.forward(f, agg)
            }
        }
    }
}

/// Graph convolution block:
/// `ReLU(BN(fc2(GELU(BN(DynConv(ReLU(BN(fc1(x)))))))))`.
#[derive(Debug, Clone)]
pub struct Gcb {
    pub fc1: Conv2d,
    pub bn1: BatchNorm2d,
    pub dynconv: DynConv,
    pub bn_graph: BatchNorm2d,
    pub fc2: Conv2d,
    pub bn2: BatchNorm2d,
    pub channels: usize,
    pub k: usize,
    pub dilation: usize,
    pub reduction: usize,
}

impl Gcb {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        variant: GraphConvVariant,
        k: usize,
        dilation: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = channels;
        Ok(Gcb {
            fc1: Conv2d::pointwise(store, &format!("{name}.fc1"), c, c, rng)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.fc1.bn"), c)?,
            dynconv: DynConv::new(store, &format!("{name}.graph"), variant, c, rng)?,
            bn_graph: BatchNorm2d::new(store, &format!("{name}.graph.bn"), c)?,
            fc2: Conv2d::pointwise(store, &format!("{name}.fc2"), c, c, rng)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.fc2.bn"), c)?,
            channels,
            k,
            dilation,
            reduction,
        })
    }

    pub fn num_params(&self) -> usize {
        self.fc1.num_params()
            + self.bn1.num_params()
            + self.dynconv.num_params()
            + self.bn_graph.num_params()
            + self.fc2.num_params()
            + self.bn2.num_params()
    }

    /// Builds the neighbour graph for `x` (detached from the tape).
    pub fn graph_for<T: Scalar>(&self, x: &Tensor<T>) -> Result<NeighborGraph> {
        let r = self.reduction;
        let cand = (x.shape().h() / r.max(1)) * (x.shape().w() / r.max(1));
        let (k, d) = effective_graph_size(self.k, self.dilation, cand);
        build_knn_graph(x, k, d, r)
    }

    /// `GELU(BN(DynConv(x)))` on a KNN graph built from `x`.
    pub fn graph_conv<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let value = f.tape.value(x).clone();
        let graph = f.graph(|| self.graph_for(&value))?;
        let cand = f.tape.avgpool2d(x, self.reduction)?;
        let h = self.dynconv.forward(f, x, cand, &graph)?;
        let h = self.bn_graph.forward(f, h)?;
        Ok(f.tape.gelu(h))
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.shape(x).c();
        if c != self.channels {
            return Err(crate::error::shape_err(
                "gcb",
                format!("block built for {} channels, input has {c}", self.channels),
            ));
        }
        let h = self.fc1.forward(f, x)?;
        let h = self.bn1.forward(f, h)?;
        let h = f.tape.relu(h);
        let h = self.graph_conv(f, h)?;
        let h = self.fc2.forward(f, h)?;
        let h = self.bn2.forward(f, h)?;
        Ok(f.tape.relu(h))
    }
}
