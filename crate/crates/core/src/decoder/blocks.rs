//! Decoder building blocks: spatial attention, GCAM, up-convolution and
//! segmentation heads.

use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::graph_conv::{Gcb, GraphConvVariant};
use crate::nn::{BatchNorm2d, Conv2d, DepthwiseConv2d, Forward, ParamStore};
use crate::ops::spatial::{ChannelReduce, UpsampleMode};
use crate::scalar::Scalar;

use super::config::GcamOrder;

/// Spatial attention: `sigmoid(conv([max_c(x), mean_c(x)])) * x`.
#[derive(Debug, Clone)]
pub struct Spa {
    pub conv: Conv2d,
}

impl Spa {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Spa {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                2,
                1,
                kernel,
                1,
                kernel / 2,
                true,
                rng,
            )?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params()
    }

    /// The `(n, 1, h, w)` attention mask.
    pub fn mask<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mx = f.tape.channel_reduce(x, ChannelReduce::Max);
        let avg = f.tape.channel_reduce(x, ChannelReduce::Avg);
        let stats = f.tape.concat_channel(mx, avg)?;
        let logits = self.conv.forward(f, stats)?;
        Ok(f.tape.sigmoid(logits))
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let m = self.mask(f, x)?;
        f.tape.mul_mask(x, m)
    }
}

/// Graph convolutional attention module, GCB followed by SPA by default.
/// Either stage may be disabled for ablations.
#[derive(Debug, Clone)]
pub struct Gcam {
    pub gcb: Option<Gcb>,
    pub spa: Option<Spa>,
    pub order: GcamOrder,
}

impl Gcam {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        variant: GraphConvVariant,
        k: usize,
        dilation: usize,
        reduction: usize,
        spa_kernel: usize,
        use_gcb: bool,
        use_spa: bool,
        order: GcamOrder,
        rng: &mut R,
    ) -> Result<Self> {
        let gcb = if use_gcb {
            Some(Gcb::new(
                store,
                &format!("{name}.gcb"),
                channels,
                variant,
                k,
                dilation,
                reduction,
                rng,
            )?)
        } else {
            None
        };
        let spa = if use_spa {
            Some(Spa::new(store, &format!("{name}.spa"), spa_kernel, rng)?)
        } else {
            None
        };
        Ok(Gcam { gcb, spa, order })
    }

    pub fn num_params(&self) -> usize {
        self.gcb.as_ref().map_or(0, Gcb::num_params) + self.spa.as_ref().map_or(0, Spa::num_params)
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let run_gcb = |f: &mut Forward<'_, T>, v: Var| match &self.gcb {
            Some(g) => g.forward(f, v),
            None => Ok(v),
        };
        let run_spa = |f: &mut Forward<'_, T>, v: Var| match &self.spa {
            Some(s) => s.forward(f, v),
            None => Ok(v),
        };
        match self.order {
            GcamOrder::GcbThenSpa => {
                let h = run_gcb(f, x)?;
                run_spa(f, h)
            }
            GcamOrder::SpaThenGcb => {
                let h = run_spa(f, x)?;
                run_gcb(f, h)
            }
        }
    }
}

/// Up-convolution block: `conv1x1(ReLU(BN(DWConv3x3(up2(x)))))`.
#[derive(Debug, Clone)]
pub struct Ucb {
    pub dw: DepthwiseConv2d,
    pub bn: BatchNorm2d,
    pub proj: Conv2d,
    pub mode: UpsampleMode,
}

impl Ucb {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        mode: UpsampleMode,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Ucb {
            dw: DepthwiseConv2d::new(store, &format!("{name}.dw"), in_channels, 3, rng)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), in_channels)?,
            proj: Conv2d::pointwise(
                store,
                &format!("{name}.proj"),
                in_channels,
                out_channels,
                rng,
            )?,
            mode,
        })
    }

    pub fn num_params(&self) -> usize {
        self.dw.num_params() + self.bn.num_params() + self.proj.num_params()
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let h = f.tape.upsample(x, 2, self.mode)?;
        let h = self.dw.forward(f, h)?;
        let h = self.bn.forward(f, h)?;
        let h = f.tape.relu(h);
        self.proj.forward(f, h)
    }
}

/// 1x1 conv producing per-stage class logits.
#[derive(Debug, Clone)]
pub struct SegHead {
    pub conv: Conv2d,
}

impl SegHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SegHead {
            conv: Conv2d::pointwise(store, &format!("{name}.conv"), in_channels, classes, rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params()
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        self.conv.forward(f, x)
    }
}
