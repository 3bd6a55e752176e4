use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{PredictionSet, Segmenter};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, LabelMask, MetricsReport};
use crate::nn::{Forward, Mode, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::config::TrainConfig;
use super::loss::{combined_loss_on_tape, mutation_loss};
use super::optim::AdamW;
use super::synth::{make_synth_range, sample_rng, Augment, SynthSample};

const MODEL_STREAM: u64 = 1 << 62;
const EPOCH_STREAM: u64 = 1 << 61;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub val_miou: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_dice,val_miou,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.6},{:.6},{:.3}",
            self.epoch, self.train_loss, self.val_dice, self.val_miou, self.seconds
        )
    }
}

pub fn write_log_csv<W: Write>(logs: &[EpochLog], mut out: W) -> Result<()> {
    writeln!(out, "{}", EpochLog::CSV_HEADER)?;
    for l in logs {
        writeln!(out, "{}", l.csv_row())?;
    }
    Ok(())
}

/// A model together with its parameters.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: Segmenter,
    pub store: ParamStore<T>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub trained: Trained<T>,
    pub logs: Vec<EpochLog>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn final_epoch(&self) -> usize {
        self.logs.last().map_or(0, |l| l.epoch)
    }
}

/// Training and validation samples.
pub type Splits<T> = (Vec<SynthSample<T>>, Vec<SynthSample<T>>);

/// Train and validation splits of the synthetic task; validation samples
/// follow the training indices so the two never overlap.
pub fn synth_splits<T: Scalar>(cfg: &TrainConfig) -> Result<Splits<T>> {
    let classes = cfg.decoder.classes;
    let train = make_synth_range(0, cfg.train_samples, cfg.image_size, classes, cfg.seed)?;
    let val = make_synth_range(
        cfg.train_samples as u64,
        cfg.val_samples,
        cfg.image_size,
        classes,
        cfg.seed,
    )?;
    Ok((train, val))
}

/// Stacks single-image tensors along the batch axis.
pub fn stack<T: Scalar>(images: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack an empty batch".into()))?
        .shape();
    let mut data = Vec::with_capacity(first.numel() * images.len());
    for im in images {
        if im.shape() != first {
            return Err(Error::InvalidArgument(format!(
                "batch images differ: {:?} vs {:?}",
                im.shape(),
                first
            )));
        }
        data.extend_from_slice(im.data());
    }
    Tensor::from_vec(
        Shape::new(images.len() * first.n(), first.c(), first.h(), first.w()),
        data,
    )
}

impl<T: Scalar> Trained<T> {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = sample_rng(cfg.seed, MODEL_STREAM);
        let model = Segmenter::new(&mut store, &cfg.decoder, &mut rng)?;
        Ok(Trained { model, store })
    }

    /// Aggregate logits for `images` in eval mode, processed in batches.
    pub fn predict(&mut self, images: &[&Tensor<T>], batch_size: usize) -> Result<Tensor<T>> {
        let mut out: Vec<T> = Vec::new();
        let mut shape = None;
        for chunk in images.chunks(batch_size.max(1)) {
            let x = stack(chunk)?;
            let mut f = Forward::inference(&mut self.store);
            let xv = f.tape.leaf(x, false);
            let p = self.model.forward(&mut f, xv)?;
            let logits = f.tape.value(p.aggregate);
            let s = logits.shape();
            shape = Some(s);
            out.extend_from_slice(logits.data());
        }
        let s = shape.ok_or_else(|| Error::InvalidArgument("no images to predict".into()))?;
        Tensor::from_vec(Shape::new(images.len(), s.c(), s.h(), s.w()), out)
    }

    pub fn evaluate(
        &mut self,
        data: &[SynthSample<T>],
        batch_size: usize,
    ) -> Result<MetricsReport> {
        let images: Vec<&Tensor<T>> = data.iter().map(|s| &s.image).collect();
        let logits = self.predict(&images, batch_size)?;
        let masks: Vec<LabelMask> = data.iter().map(|s| s.mask.clone()).collect();
        evaluate(&logits, &masks)
    }
}

fn batch_loss<T: Scalar>(
    f: &mut Forward<'_, T>,
    preds: &PredictionSet,
    masks: &[LabelMask],
    cfg: &TrainConfig,
) -> Result<crate::autograd::Var> {
    if cfg.loss.mutation {
        Ok(mutation_loss(&mut f.tape, &preds.heads, masks, &cfg.loss)?.0)
    } else {
        combined_loss_on_tape(&mut f.tape, preds.aggregate, masks, &cfg.loss)
    }
}

/// Runs the full training loop, calling `on_epoch` after every epoch.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    train_set: &[SynthSample<T>],
    val_set: &[SynthSample<T>],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    let mut trained = Trained::<T>::init(cfg)?;
    let mut opt = AdamW::new(&trained.store, cfg.optim.clone())?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut rng: ChaCha8Rng = sample_rng(cfg.seed, EPOCH_STREAM + epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train_set[i];
                if cfg.augment {
                    let a = Augment::sample(&mut rng, s.mask.h == s.mask.w);
                    images.push(a.apply_image(&s.image));
                    masks.push(a.apply_mask(&s.mask));
                } else {
                    images.push(s.image.clone());
                    masks.push(s.mask.clone());
                }
            }
            let x = stack(&images.iter().collect::<Vec<_>>())?;
            let mut f = Forward::new(&mut trained.store, Mode::Train);
            let xv = f.tape.leaf(x, false);
            let preds = trained.model.forward(&mut f, xv)?;
            let loss = batch_loss(&mut f, &preds, &masks, cfg)?;
            let value = f.tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { value, epoch, step });
            }
            let (tape, binding) = f.finish();
            let grads = tape.backward(loss)?;
            trained.store.load_grads(&binding, &grads);
            opt.step(&mut trained.store)?;
            loss_sum += value;
            batches += 1;
        }
        let report = trained.evaluate(val_set, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_dice: report.mean_dice,
            val_miou: report.miou,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        let done = cfg.target_dice.is_some_and(|t| log.val_dice >= t);
        logs.push(log);
        if done {
            break;
        }
    }
    Ok(TrainOutcome { trained, logs })
}
