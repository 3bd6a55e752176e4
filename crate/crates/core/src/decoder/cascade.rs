use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Forward, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blocks::{Gcam, SegHead, Ucb};
use super::config::{Aggregation, DecoderConfig};

/// Stage logits `p1..p4` (each resized to the input resolution) and their
/// weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct PredictionSet {
    /// `heads[0]` is p1 (highest resolution stage), `heads[3]` is p4.
    pub heads: [Var; 4],
    pub aggregate: Var,
}

/// Materialised predictions.
#[derive(Debug, Clone)]
pub struct Predictions<T> {
    pub heads: [Tensor<T>; 4],
    pub aggregate: Tensor<T>,
}

impl PredictionSet {
    pub fn materialize<T: Scalar>(&self, f: &Forward<'_, T>) -> Predictions<T> {
        Predictions {
            heads: self.heads.map(|v| f.tape.value(v).clone()),
            aggregate: f.tape.value(self.aggregate).clone(),
        }
    }
}

/// The four-stage cascaded decoder. Arrays are indexed by `stage - 1`.
#[derive(Debug, Clone)]
pub struct GCascade {
    pub cfg: DecoderConfig,
    pub gcams: [Gcam; 4],
    /// `ucbs[i]` upsamples the output of stage `i + 2` into stage `i + 1`.
    pub ucbs: [Ucb; 3],
    pub heads: [SegHead; 4],
}

impl GCascade {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &DecoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut gcams = Vec::with_capacity(4);
        let mut heads = Vec::with_capacity(4);
        let mut ucbs = Vec::with_capacity(3);
        // build from the deepest stage so parameter order follows data flow
        for stage in (1..=4).rev() {
            if stage < 4 {
                ucbs.push(Ucb::new(
                    store,
                    &format!("stage{stage}.ucb"),
                    cfg.gcam_channels(stage + 1),
                    cfg.channels(stage),
                    cfg.upsample,
                    rng,
                )?);
            }
            let c = cfg.gcam_channels(stage);
            gcams.push(Gcam::new(
                store,
                &format!("stage{stage}.gcam"),
                c,
                cfg.variant,
                cfg.k,
                cfg.dilation(stage),
                cfg.reduction(stage),
                cfg.spa_kernel,
                cfg.use_gcb,
                cfg.use_spa,
                cfg.gcam_order,
                rng,
            )?);
            heads.push(SegHead::new(
                store,
                &format!("stage{stage}.head"),
                c,
                cfg.classes,
                rng,
            )?);
        }
        gcams.reverse();
        heads.reverse();
        ucbs.reverse();
        Ok(GCascade {
            cfg: cfg.clone(),
            gcams: gcams.try_into().expect("four stages"),
            ucbs: ucbs.try_into().expect("three ucbs"),
            heads: heads.try_into().expect("four heads"),
        })
    }

    pub fn num_params(&self) -> usize {
        self.gcams.iter().map(Gcam::num_params).sum::<usize>()
            + self.ucbs.iter().map(Ucb::num_params).sum::<usize>()
            + self.heads.iter().map(SegHead::num_params).sum::<usize>()
    }

    fn check_pyramid<T: Scalar>(&self, f: &Forward<'_, T>, features: &[Var; 4]) -> Result<()> {
        let x4 = f.tape.shape(features[0]);
        let (n, h4, w4) = (x4.n(), x4.h(), x4.w());
        for (i, &v) in features.iter().enumerate() {
            let stage = 4 - i;
            let scale = 1 << i;
            let expected = [n, self.cfg.channels(stage), h4 * scale, w4 * scale];
            let got = f.tape.shape(v).0;
            if got != expected {
                return Err(Error::Pyramid {
                    stage,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Runs the cascade over `[X4, X3, X2, X1]`.
    pub fn forward<T: Scalar>(
        &self,
        f: &mut Forward<'_, T>,
        features: [Var; 4],
    ) -> Result<PredictionSet> {
        self.check_pyramid(f, &features)?;
        let mut stage_logits = [features[0]; 4];
        let mut d = self.gcams[3].forward(f, features[0])?;
        stage_logits[3] = self.heads[3].forward(f, d)?;
        for stage in (1..=3).rev() {
            let skip = features[4 - stage];
            let up = self.ucbs[stage - 1].forward(f, d)?;
            let merged = match self.cfg.aggregation {
                Aggregation::Add => f.tape.add(up, skip)?,
                Aggregation::Concat => f.tape.concat_channel(up, skip)?,
            };
            d = self.gcams[stage - 1].forward(f, merged)?;
            stage_logits[stage - 1] = self.heads[stage - 1].forward(f, d)?;
        }

        // p_i sits at 1/2^(i+1) of the input resolution
        let mut heads = stage_logits;
        for (i, h) in heads.iter_mut().enumerate() {
            *h = f.tape.upsample(*h, 1 << (i + 2), self.cfg.upsample)?;
        }
        let mut aggregate: Option<Var> = None;
        for (i, &h) in heads.iter().enumerate() {
            let w = self.cfg.head_weights[i];
            let term = if w == 1.0 {
                h
            } else {
                f.tape.scale(h, T::lit(w))
            };
            aggregate = Some(match aggregate {
                None => term,
                Some(a) => f.tape.add(a, term)?,
            });
        }
        Ok(PredictionSet {
            heads,
            aggregate: aggregate.expect("four heads"),
        })
    }
}

/// Final activation: sigmoid for a single-channel (binary) output,
/// channel softmax otherwise.
pub fn activate<T: Scalar>(f: &mut Forward<'_, T>, logits: Var) -> Var {
    if f.tape.shape(logits).c() == 1 {
        f.tape.sigmoid(logits)
    } else {
        f.tape.softmax_channel(logits)
    }
}
