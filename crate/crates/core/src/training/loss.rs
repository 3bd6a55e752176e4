use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::ops::pointwise::{sigmoid_scalar, softmax_channel, softmax_channel_backward};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// Weighted sum of softmax cross-entropy and soft DICE.
    #[default]
    CeDice,
    /// Sum of (optionally boundary-weighted) sigmoid BCE and soft IoU.
    BceIou,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CeDice => "ce_dice",
            LossKind::BceIou => "bce_iou",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce_dice" => Ok(LossKind::CeDice),
            "bce_iou" => Ok(LossKind::BceIou),
            _ => Err(Error::InvalidArgument(format!(
                "unknown loss kind {s} (expected ce_dice or bce_iou)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub ce_weight: f64,
    pub dice_weight: f64,
    /// Boundary-emphasis weight map for `bce_iou`.
    pub boundary_weighting: bool,
    /// Sum the loss over every non-empty subset of the stage heads instead
    /// of using the aggregate prediction alone.
    pub mutation: bool,
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::CeDice,
            ce_weight: 0.3,
            dice_weight: 0.7,
            boundary_weighting: true,
            mutation: true,
            smooth: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.ce_weight) || !ok(self.dice_weight) || !ok(self.smooth) {
            return Err(Error::InvalidArgument(
                "loss weights and smoothing must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A scalar loss value with its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossTerm<T> {
    pub value: T,
    pub grad: Vec<T>,
}

impl<T: Scalar> LossTerm<T> {
    fn zero(len: usize) -> Self {
        LossTerm {
            value: T::zero(),
            grad: vec![T::zero(); len],
        }
    }

    /// `self += weight * other`.
    fn add_scaled(&mut self, weight: f64, other: LossTerm<T>) {
        let w = T::lit(weight);
        self.value += w * other.value;
        for (a, b) in self.grad.iter_mut().zip(other.grad) {
            *a += w * b;
        }
    }
}

fn check_target<T: Scalar>(logits: &Tensor<T>, target: &[LabelMask]) -> Result<()> {
    let s = logits.shape();
    if target.len() != s.n() {
        return Err(Error::InvalidArgument(format!(
            "{} targets for batch {}",
            target.len(),
            s.n()
        )));
    }
    for m in target {
        if (m.h, m.w) != (s.h(), s.w()) {
            return Err(Error::InvalidArgument(format!(
                "target {}x{} vs logits {}x{}",
                m.h,
                m.w,
                s.h(),
                s.w()
            )));
        }
        m.check_classes(s.c().max(2))?;
    }
    Ok(())
}

/// One-hot targets laid out like the logits. A single channel holds the
/// foreground indicator `label != 0`.
pub fn one_hot<T: Scalar>(shape: Shape, target: &[LabelMask]) -> Tensor<T> {
    let single = shape.c() == 1;
    Tensor::from_fn(shape, |[n, c, r, col]| {
        let label = target[n].get(r, col) as usize;
        let on = if single { label != 0 } else { label == c };
        if on {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Class probabilities: channel softmax, or sigmoid for one channel.
pub fn probabilities<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    if logits.shape().c() == 1 {
        logits.map(sigmoid_scalar)
    } else {
        softmax_channel(logits)
    }
}

/// Chains a gradient with respect to probabilities back to the logits.
fn through_activation<T: Scalar>(probs: &Tensor<T>, gp: &[T]) -> Vec<T> {
    if probs.shape().c() == 1 {
        probs
            .data()
            .iter()
            .zip(gp)
            .map(|(&p, &g)| g * p * (T::one() - p))
            .collect()
    } else {
        softmax_channel_backward(probs, gp)
    }
}

/// Boundary-emphasis weights `1 + 5 |avgpool31(y) - y|` per channel, where
/// the 31x31 mean counts zero padding.
pub fn boundary_weights<T: Scalar>(y: &Tensor<T>) -> Tensor<T> {
    const R: usize = 15;
    let s = y.shape();
    let (h, w) = (s.h(), s.w());
    let area = T::lit(((2 * R + 1) * (2 * R + 1)) as f64);
    let five = T::lit(5.0);
    let mut out = Tensor::zeros(s);
    let mut integral = vec![T::zero(); (h + 1) * (w + 1)];
    for n in 0..s.n() {
        for c in 0..s.c() {
            let plane = y.plane(n, c);
            for r in 0..h {
                let mut row = T::zero();
                for col in 0..w {
                    row += plane[r * w + col];
                    integral[(r + 1) * (w + 1) + col + 1] = integral[r * (w + 1) + col + 1] + row;
                }
            }
            let base = (n * s.c() + c) * h * w;
            for r in 0..h {
                let (r0, r1) = (r.saturating_sub(R), (r + R + 1).min(h));
                for col in 0..w {
                    let (c0, c1) = (col.saturating_sub(R), (col + R + 1).min(w));
                    let sum = integral[r1 * (w + 1) + c1] + integral[r0 * (w + 1) + c0]
                        - integral[r0 * (w + 1) + c1]
                        - integral[r1 * (w + 1) + c0];
                    let v = plane[r * w + col];
                    out.data_mut()[base + r * w + col] = T::one() + five * (sum / area - v).abs();
                }
            }
        }
    }
    out
}

/// Mean softmax cross-entropy (`sum w * nll / sum w`, per-pixel weights).
/// A single channel falls back to binary cross-entropy.
pub fn ce_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &[LabelMask],
    weights: Option<&[T]>,
) -> Result<LossTerm<T>> {
    check_target(logits, target)?;
    let s = logits.shape();
    if s.c() == 1 {
        return bce_loss(logits, target, weights);
    }
    let (c, plane) = (s.c(), s.plane());
    if let Some(w) = weights {
        if w.len() != s.n() * plane {
            return Err(Error::InvalidArgument(
                "CE weight map must have one entry per pixel".into(),
            ));
        }
    }
    let probs = softmax_channel(logits);
    let mut grad = vec![T::zero(); logits.numel()];
    let mut total = T::zero();
    let mut wsum = T::zero();
    let mut weight_at = Vec::with_capacity(s.n() * plane);
    for n in 0..s.n() {
        for i in 0..plane {
            let base = n * c * plane + i;
            let label = target[n].data[i] as usize;
            let mut m = logits.data()[base];
            for k in 1..c {
                m = m.max(logits.data()[base + k * plane]);
            }
            let mut z = T::zero();
            for k in 0..c {
                z += (logits.data()[base + k * plane] - m).exp();
            }
            let nll = m + z.ln() - logits.data()[base + label * plane];
            let w = weights.map_or(T::one(), |w| w[n * plane + i]);
            total += w * nll;
            wsum += w;
            weight_at.push(w);
        }
    }
    if wsum <= T::zero() {
        return Ok(LossTerm::zero(logits.numel()));
    }
    for n in 0..s.n() {
        for i in 0..plane {
            let base = n * c * plane + i;
            let label = target[n].data[i] as usize;
            let w = weight_at[n * plane + i] / wsum;
            for k in 0..c {
                let p = probs.data()[base + k * plane];
                let d = if k == label { p - T::one() } else { p };
                grad[base + k * plane] = w * d;
            }
        }
    }
    Ok(LossTerm {
        value: total / wsum,
        grad,
    })
}

/// Mean sigmoid binary cross-entropy against one-hot targets, normalised by
/// the total weight.
pub fn bce_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &[LabelMask],
    weights: Option<&[T]>,
) -> Result<LossTerm<T>> {
    check_target(logits, target)?;
    let y = one_hot::<T>(logits.shape(), target);
    if let Some(w) = weights {
        if w.len() != logits.numel() {
            return Err(Error::InvalidArgument(
                "BCE weight map must match the logits".into(),
            ));
        }
    }
    let mut total = T::zero();
    let mut wsum = T::zero();
    for (i, (&z, &t)) in logits.data().iter().zip(y.data()).enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        let l = z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p();
        total += w * l;
        wsum += w;
    }
    if wsum <= T::zero() {
        return Ok(LossTerm::zero(logits.numel()));
    }
    let grad = logits
        .data()
        .iter()
        .zip(y.data())
        .enumerate()
        .map(|(i, (&z, &t))| weights.map_or(T::one(), |w| w[i]) * (sigmoid_scalar(z) - t) / wsum)
        .collect();
    Ok(LossTerm {
        value: total / wsum,
        grad,
    })
}

/// Soft DICE `1 - (2 sum p y + s) / (sum p + sum y + s)` per (sample,
/// class), averaged.
pub fn dice_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &[LabelMask],
    smooth: f64,
) -> Result<LossTerm<T>> {
    check_target(logits, target)?;
    let s = logits.shape();
    let probs = probabilities(logits);
    let y = one_hot::<T>(s, target);
    let sm = T::lit(smooth);
    let groups = T::lit((s.n() * s.c()) as f64);
    let plane = s.plane();
    let mut value = T::zero();
    let mut gp = vec![T::zero(); logits.numel()];
    for g in 0..s.n() * s.c() {
        let p = &probs.data()[g * plane..(g + 1) * plane];
        let t = &y.data()[g * plane..(g + 1) * plane];
        let inter: T = p.iter().zip(t).map(|(&a, &b)| a * b).sum();
        let psum: T = p.iter().copied().sum();
        let ysum: T = t.iter().copied().sum();
        let num = T::lit(2.0) * inter + sm;
        let den = psum + ysum + sm;
        if den <= T::zero() {
            continue;
        }
        value += T::one() - num / den;
        for i in 0..plane {
            gp[g * plane + i] = -(T::lit(2.0) * t[i] * den - num) / (den * den) / groups;
        }
    }
    Ok(LossTerm {
        value: value / groups,
        grad: through_activation(&probs, &gp),
    })
}

/// Soft IoU `1 - (sum w p y + s) / (sum w (p + y - p y) + s)` per (sample,
/// class), averaged.
pub fn iou_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &[LabelMask],
    weights: Option<&[T]>,
    smooth: f64,
) -> Result<LossTerm<T>> {
    check_target(logits, target)?;
    let s = logits.shape();
    if let Some(w) = weights {
        if w.len() != logits.numel() {
            return Err(Error::InvalidArgument(
                "IoU weight map must match the logits".into(),
            ));
        }
    }
    let probs = probabilities(logits);
    let y = one_hot::<T>(s, target);
    let sm = T::lit(smooth);
    let groups = T::lit((s.n() * s.c()) as f64);
    let plane = s.plane();
    let wt = |i: usize| weights.map_or(T::one(), |w| w[i]);
    let mut value = T::zero();
    let mut gp = vec![T::zero(); logits.numel()];
    for g in 0..s.n() * s.c() {
        let range = g * plane..(g + 1) * plane;
        let mut num = sm;
        let mut den = sm;
        for i in range.clone() {
            let (p, t, w) = (probs.data()[i], y.data()[i], wt(i));
            num += w * p * t;
            den += w * (p + t - p * t);
        }
        if den <= T::zero() {
            continue;
        }
        value += T::one() - num / den;
        for i in range {
            let (t, w) = (y.data()[i], wt(i));
            // d num/dp = w t, d den/dp = w (1 - t)
            gp[i] = -(w * t * den - num * w * (T::one() - t)) / (den * den) / groups;
        }
    }
    Ok(LossTerm {
        value: value / groups,
        grad: through_activation(&probs, &gp),
    })
}

/// The configured loss recipe on one prediction.
pub fn combined_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &[LabelMask],
    cfg: &LossConfig,
) -> Result<LossTerm<T>> {
    let mut out = LossTerm::zero(logits.numel());
    match cfg.kind {
        LossKind::CeDice => {
            if cfg.ce_weight != 0.0 {
                out.add_scaled(cfg.ce_weight, ce_loss(logits, target, None)?);
            }
            if cfg.dice_weight != 0.0 {
                out.add_scaled(cfg.dice_weight, dice_loss(logits, target, cfg.smooth)?);
            }
        }
        LossKind::BceIou => {
            let w = cfg
                .boundary_weighting
                .then(|| boundary_weights(&one_hot::<T>(logits.shape(), target)));
            let w = w.as_ref().map(|w| w.data());
            out.add_scaled(1.0, bce_loss(logits, target, w)?);
            out.add_scaled(1.0, iou_loss(logits, target, w, cfg.smooth)?);
        }
    }
    Ok(out)
}

/// Records `combined_loss(x)` on the tape.
pub fn combined_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    target: &[LabelMask],
    cfg: &LossConfig,
) -> Result<Var> {
    let term = combined_loss(tape.value(logits), target, cfg)?;
    tape.fused_scalar(logits, term.value, term.grad)
}

/// Non-empty head subsets as bitmasks, in increasing order.
pub fn head_subsets(n: usize) -> impl Iterator<Item = usize> {
    1..(1usize << n)
}

/// Sum of `combined_loss` over the logit sums of all `2^n - 1` non-empty
/// subsets of `heads`. Returns the loss and the number of subset terms.
pub fn mutation_loss<T: Scalar>(
    tape: &mut Tape<T>,
    heads: &[Var],
    target: &[LabelMask],
    cfg: &LossConfig,
) -> Result<(Var, usize)> {
    if heads.is_empty() {
        return Err(Error::InvalidArgument(
            "mutation loss needs at least one head".into(),
        ));
    }
    if heads.len() > 16 {
        return Err(Error::InvalidArgument(format!(
            "{} heads is too many subsets",
            heads.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut count = 0;
    for mask in head_subsets(heads.len()) {
        let mut sum: Option<Var> = None;
        for (i, &h) in heads.iter().enumerate() {
            if mask & (1 << i) != 0 {
                sum = Some(match sum {
                    None => h,
                    Some(s) => tape.add(s, h)?,
                });
            }
        }
        let l = combined_loss_on_tape(tape, sum.expect("non-empty subset"), target, cfg)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
        count += 1;
    }
    Ok((total.expect("at least one subset"), count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(h: usize, w: usize, v: &[u8]) -> LabelMask {
        LabelMask::new(h, w, v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_ce_is_ln_classes() {
        let logits = Tensor::<f64>::zeros(Shape::new(1, 4, 2, 2));
        let t = labels(2, 2, &[0, 1, 2, 3]);
        let l = ce_loss(&logits, &[t], None).unwrap();
        assert!(close(l.value, 4f64.ln(), 1e-15));
    }

    #[test]
    fn zero_logit_bce_is_ln2() {
        let logits = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        let l = bce_loss(&logits, &[labels(2, 2, &[0, 1, 1, 0])], None).unwrap();
        assert!(close(l.value, 2f64.ln(), 1e-15));
    }

    #[test]
    fn dice_half_example() {
        // sigmoid(0) = 0.5 everywhere, half the 2x2 target on
        let logits = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        let l = dice_loss(&logits, &[labels(2, 2, &[1, 1, 0, 0])], 1.0).unwrap();
        assert!(close(l.value, 0.4, 1e-15));
    }

    #[test]
    fn dice_and_iou_limits() {
        let t = labels(2, 2, &[1, 1, 0, 0]);
        let exact = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![60.0, 60.0, -60.0, -60.0])
            .unwrap();
        let inverse = exact.map(|v| -v);
        assert!(
            dice_loss(&exact, std::slice::from_ref(&t), 1e-9)
                .unwrap()
                .value
                < 1e-9
        );
        assert!(close(
            dice_loss(&inverse, std::slice::from_ref(&t), 1e-9)
                .unwrap()
                .value,
            1.0,
            1e-9
        ));
        assert!(
            iou_loss(&exact, std::slice::from_ref(&t), None, 1e-9)
                .unwrap()
                .value
                < 1e-9
        );
        assert!(close(
            iou_loss(&inverse, std::slice::from_ref(&t), None, 1e-9)
                .unwrap()
                .value,
            1.0,
            1e-9
        ));
        let ones = vec![1.0; 4];
        assert_eq!(
            iou_loss(&exact, std::slice::from_ref(&t), None, 1.0)
                .unwrap()
                .value,
            iou_loss(&exact, &[t], Some(&ones), 1.0).unwrap().value
        );
    }

    #[test]
    fn combined_arithmetic() {
        let logits = Tensor::<f64>::zeros(Shape::new(1, 4, 2, 2));
        let t = [labels(2, 2, &[0, 1, 2, 3])];
        let cfg = LossConfig::default();
        let ce = ce_loss(&logits, &t, None).unwrap().value;
        let dice = dice_loss(&logits, &t, 1.0).unwrap().value;
        let c = combined_loss(&logits, &t, &cfg).unwrap().value;
        assert!(close(c, 0.3 * ce + 0.7 * dice, 1e-15));
        let pure = LossConfig {
            dice_weight: 0.0,
            ..cfg
        };
        assert!(close(
            combined_loss(&logits, &t, &pure).unwrap().value,
            0.3 * 4f64.ln(),
            1e-15
        ));
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1));
        match ce_loss(&logits, &[labels(1, 1, &[3])], None) {
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn boundary_weights_match_naive_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = Tensor::<f64>::from_fn(Shape::new(1, 2, 20, 35), |_| {
            if rand::Rng::gen_bool(&mut rng, 0.3) {
                1.0
            } else {
                0.0
            }
        });
        let w = boundary_weights(&y);
        for c in 0..2 {
            for r in 0..20i64 {
                for col in 0..35i64 {
                    let mut s = 0.0;
                    for dr in -15..=15 {
                        for dc in -15..=15 {
                            let (rr, cc) = (r + dr, col + dc);
                            if (0..20).contains(&rr) && (0..35).contains(&cc) {
                                s += y.at([0, c, rr as usize, cc as usize]);
                            }
                        }
                    }
                    let v = y.at([0, c, r as usize, col as usize]);
                    let expect = 1.0 + 5.0 * (s / 961.0 - v).abs();
                    assert!(close(w.at([0, c, r as usize, col as usize]), expect, 1e-12));
                }
            }
        }
    }

    fn fd_check(f: impl Fn(&Tensor<f64>) -> LossTerm<f64>, x: &Tensor<f64>) {
        let g = f(x).grad;
        for i in 0..x.numel() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.data_mut()[i] += 1e-6;
            b.data_mut()[i] -= 1e-6;
            let fd = (f(&a).value - f(&b).value) / 2e-6;
            assert!(
                (fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "i={i} fd={fd} an={}",
                g[i]
            );
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = [
            labels(3, 3, &[0, 1, 2, 2, 1, 0, 0, 0, 2]),
            labels(3, 3, &[1, 1, 1, 0, 0, 0, 2, 2, 2]),
        ];
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 3, 3), 1.5, &mut rng);
        fd_check(|x| ce_loss(x, &t, None).unwrap(), &x);
        fd_check(|x| dice_loss(x, &t, 1.0).unwrap(), &x);
        fd_check(|x| bce_loss(x, &t, None).unwrap(), &x);
        let w = boundary_weights(&one_hot::<f64>(x.shape(), &t));
        fd_check(|x| iou_loss(x, &t, Some(w.data()), 1.0).unwrap(), &x);
        let bin = [
            labels(3, 3, &[0, 1, 1, 0, 1, 0, 0, 0, 1]),
            labels(3, 3, &[1; 9]),
        ];
        let xb = Tensor::<f64>::randn(Shape::new(2, 1, 3, 3), 1.5, &mut rng);
        let cfg = LossConfig {
            kind: LossKind::BceIou,
            ..LossConfig::default()
        };
        fd_check(|x| combined_loss(x, &bin, &cfg).unwrap(), &xb);
        fd_check(|x| dice_loss(x, &bin, 1.0).unwrap(), &xb);
    }

    #[test]
    fn mutation_single_head_is_combined() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = [labels(2, 2, &[0, 1, 2, 1])];
        let x = Tensor::<f64>::randn(Shape::new(1, 3, 2, 2), 1.0, &mut rng);
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), true);
        let (l, n) = mutation_loss(&mut tape, &[v], &t, &cfg).unwrap();
        assert_eq!(n, 1);
        assert_eq!(
            tape.value(l).item(),
            combined_loss(&x, &t, &cfg).unwrap().value
        );
        assert!(mutation_loss(&mut tape, &[], &t, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_bounded(vals in proptest::collection::vec(-8.0f64..8.0, 18), lab in proptest::collection::vec(0u8..2, 9)) {
            let x = Tensor::from_vec(Shape::new(1, 2, 3, 3), vals).unwrap();
            let t = [labels(3, 3, &lab)];
            for kind in [LossKind::CeDice, LossKind::BceIou] {
                let cfg = LossConfig { kind, ..LossConfig::default() };
                let v = combined_loss(&x, &t, &cfg).unwrap().value;
                prop_assert!(v.is_finite() && v >= 0.0);
            }
            let d = dice_loss(&x, &t, 1.0).unwrap().value;
            let j = iou_loss(&x, &t, None, 1.0).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
        }
    }
}
