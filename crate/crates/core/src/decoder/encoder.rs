use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, Forward, ParamStore};
use crate::scalar::Scalar;

/// Trainable stand-in for a pretrained pyramid backbone: four blocks of
/// stride-2 `conv3x3 -> BN -> ReLU`, the first with an extra stride-2
/// layer, emitting features at 1/4, 1/8, 1/16 and 1/32 scale.
#[derive(Debug, Clone)]
pub struct EncoderStub {
    /// `layers[stage - 1]` lists the (conv, bn) pairs of that block.
    pub layers: [Vec<(Conv2d, BatchNorm2d)>; 4],
}

impl EncoderStub {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        in_channels: usize,
        stage_channels: [usize; 4],
        rng: &mut R,
    ) -> Result<Self> {
        let widths = [
            stage_channels[3],
            stage_channels[2],
            stage_channels[1],
            stage_channels[0],
        ];
        let mut layers: [Vec<(Conv2d, BatchNorm2d)>; 4] = Default::default();
        let mut c_in = in_channels;
        for (i, &c_out) in widths.iter().enumerate() {
            let reps = if i == 0 { 2 } else { 1 };
            for r in 0..reps {
                let name = format!("encoder.block{}.{r}", i + 1);
                let conv = Conv2d::new(
                    store,
                    &format!("{name}.conv"),
                    c_in,
                    c_out,
                    3,
                    2,
                    1,
                    true,
                    rng,
                )?;
                let bn = BatchNorm2d::new(store, &format!("{name}.bn"), c_out)?;
                layers[i].push((conv, bn));
                c_in = c_out;
            }
        }
        Ok(EncoderStub { layers })
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|(c, b)| c.num_params() + b.num_params())
            .sum()
    }

    /// Returns `[X4, X3, X2, X1]`.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, image: Var) -> Result<[Var; 4]> {
        let mut h = image;
        let mut out = [image; 4];
        for (i, block) in self.layers.iter().enumerate() {
            for (conv, bn) in block {
                h = conv.forward(f, h)?;
                h = bn.forward(f, h)?;
                h = f.tape.relu(h);
            }
            out[3 - i] = h;
        }
        Ok(out)
    }
}
