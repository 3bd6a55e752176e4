//! The cascaded decoder, its blocks and a small trainable encoder.

mod blocks;
mod cascade;
mod config;
mod encoder;

pub use blocks::{Gcam, SegHead, Spa, Ucb};
pub use cascade::{activate, GCascade, PredictionSet, Predictions};
pub use config::{Aggregation, DecoderConfig, GcamOrder};
pub use encoder::EncoderStub;

use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{Forward, ParamStore};
use crate::scalar::Scalar;

/// Encoder stub plus decoder: image in, stage predictions out.
#[derive(Debug, Clone)]
pub struct Segmenter {
    pub encoder: EncoderStub,
    pub decoder: GCascade,
}

impl Segmenter {
    pub const IMAGE_CHANNELS: usize = 3;

    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &DecoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let encoder = EncoderStub::new(store, Self::IMAGE_CHANNELS, cfg.stage_channels, rng)?;
        let decoder = GCascade::new(store, cfg, rng)?;
        Ok(Segmenter { encoder, decoder })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, image: Var) -> Result<PredictionSet> {
        let feats = self.encoder.forward(f, image)?;
        self.decoder.forward(f, feats)
    }
}
