use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// One synthetic image `(1, 3, H, W)` with its label map.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample<T> {
    pub image: Tensor<T>,
    pub mask: LabelMask,
}

/// Standard deviation of the additive Gaussian noise.
pub const NOISE_STD: f64 = 0.2;

/// Independent RNG stream for sample `index` of `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Grey level of a class; background is 0 and foreground classes are
/// evenly spaced up to 1.
pub fn class_intensity(class: usize, classes: usize) -> f64 {
    if classes <= 1 {
        0.0
    } else {
        class as f64 / (classes - 1) as f64
    }
}

fn draw_shape(mask: &mut LabelMask, label: u8, rng: &mut ChaCha8Rng) {
    let (h, w) = (mask.h, mask.w);
    let lo = |d: usize| (d / 4).max(1);
    let hi = |d: usize| (d * 5 / 8).max(lo(d));
    let sh = rng.gen_range(lo(h)..=hi(h));
    let sw = rng.gen_range(lo(w)..=hi(w));
    let top = rng.gen_range(0..=h - sh);
    let left = rng.gen_range(0..=w - sw);
    let ellipse = rng.gen_bool(0.5);
    let (cy, cx) = (top as f64 + sh as f64 / 2.0, left as f64 + sw as f64 / 2.0);
    let (ry, rx) = (sh as f64 / 2.0, sw as f64 / 2.0);
    for r in top..top + sh {
        for c in left..left + sw {
            let inside = if ellipse {
                let dy = (r as f64 + 0.5 - cy) / ry;
                let dx = (c as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            } else {
                true
            };
            if inside {
                mask.set(r, c, label);
            }
        }
    }
    // a degenerate ellipse still marks its centre pixel
    mask.set(top + sh / 2, left + sw / 2, label);
}

/// Sample `index` of the dataset defined by `seed`: 1 to 3 rectangles or
/// ellipses with distinct foreground classes over a noisy background.
/// Sample `i` always shows class `1 + i mod (classes - 1)` on top.
pub fn synth_sample<T: Scalar>(
    index: u64,
    size: usize,
    classes: usize,
    seed: u64,
) -> Result<SynthSample<T>> {
    if !(2..=256).contains(&classes) {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs 2..=256 classes, got {classes}"
        )));
    }
    if size < 4 {
        return Err(Error::InvalidArgument(format!(
            "synthetic image size {size} is below 4"
        )));
    }
    let mut rng = sample_rng(seed, index);
    let fg = classes - 1;
    let count = rng.gen_range(1..=fg.min(3));
    let mut labels = vec![1 + (index as usize % fg)];
    while labels.len() < count {
        let l = rng.gen_range(1..classes);
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let mut mask = LabelMask::zeros(size, size);
    // the guaranteed label is drawn last so it is never occluded
    for &l in labels.iter().rev() {
        draw_shape(&mut mask, l as u8, &mut rng);
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let plane: Vec<f64> = mask
        .data
        .iter()
        .map(|&l| class_intensity(l as usize, classes) + noise.sample(&mut rng))
        .collect();
    let image = Tensor::from_fn(Shape::new(1, 3, size, size), |[_, _, r, c]| {
        T::lit(plane[r * size + c])
    });
    Ok(SynthSample { image, mask })
}

/// Samples `first .. first + n` of the dataset defined by `seed`.
pub fn make_synth_range<T: Scalar>(
    first: u64,
    n: usize,
    size: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<SynthSample<T>>> {
    (first..first + n as u64)
        .map(|i| synth_sample(i, size, classes, seed))
        .collect()
}

pub fn make_synth_dataset<T: Scalar>(
    n: usize,
    size: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<SynthSample<T>>> {
    make_synth_range(0, n, size, classes, seed)
}

/// A flip followed by a rotation by a multiple of 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub hflip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
}

impl Augment {
    /// Flip with probability 0.5, uniform rotation (half turns only for
    /// non-square inputs).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, square: bool) -> Self {
        let hflip = rng.gen_bool(0.5);
        let quarter_turns = if square {
            rng.gen_range(0..4)
        } else {
            2 * rng.gen_range(0..2)
        };
        Augment {
            hflip,
            quarter_turns,
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source pixel of output pixel `(r, c)` for an `h x w` input.
    fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        // undo rotation, then undo flip
        let (mut r, mut c) = (r, c);
        let (mut hh, mut ww) = self.out_dims(h, w);
        for _ in 0..self.quarter_turns % 4 {
            // output of one ccw turn at (r, c) came from (c, ww_prev - 1 - r)
            let prev_w = hh;
            let (nr, nc) = (c, prev_w - 1 - r);
            r = nr;
            c = nc;
            std::mem::swap(&mut hh, &mut ww);
        }
        if self.hflip {
            c = w - 1 - c;
        }
        (r, c)
    }

    pub fn apply_mask(&self, m: &LabelMask) -> LabelMask {
        let (oh, ow) = self.out_dims(m.h, m.w);
        let mut data = Vec::with_capacity(oh * ow);
        for r in 0..oh {
            for c in 0..ow {
                let (sr, sc) = self.source(r, c, m.h, m.w);
                data.push(m.get(sr, sc));
            }
        }
        LabelMask { h: oh, w: ow, data }
    }

    pub fn apply_image<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        let (oh, ow) = self.out_dims(s.h(), s.w());
        Tensor::from_fn(Shape::new(s.n(), s.c(), oh, ow), |[n, c, r, col]| {
            let (sr, sc) = self.source(r, col, s.h(), s.w());
            x.at([n, c, sr, sc])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = make_synth_dataset::<f32>(5, 32, 3, 7).unwrap();
        let b = make_synth_dataset::<f32>(5, 32, 3, 7).unwrap();
        assert_eq!(a, b);
        let c = make_synth_dataset::<f32>(5, 32, 3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn binary_masks_have_foreground() {
        for s in make_synth_dataset::<f32>(100, 32, 2, 1).unwrap() {
            assert!(s.mask.data.contains(&1));
            s.mask.check_classes(2).unwrap();
        }
    }

    #[test]
    fn all_classes_present() {
        let data = make_synth_dataset::<f64>(20, 32, 5, 3).unwrap();
        let mut hist = [0usize; 5];
        for s in &data {
            for &v in &s.mask.data {
                hist[v as usize] += 1;
            }
        }
        assert!(hist.iter().all(|&n| n > 0), "{hist:?}");
    }

    #[test]
    fn image_channels_replicated() {
        let s = synth_sample::<f64>(0, 16, 3, 0).unwrap();
        assert_eq!(s.image.shape(), Shape::new(1, 3, 16, 16));
        assert_eq!(s.image.plane(0, 0), s.image.plane(0, 2));
    }

    #[test]
    fn single_quarter_turn_is_ccw() {
        let m = LabelMask::new(2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let a = Augment {
            hflip: false,
            quarter_turns: 1,
        };
        let r = a.apply_mask(&m);
        assert_eq!((r.h, r.w), (3, 2));
        assert_eq!(r.data, vec![3, 6, 2, 5, 1, 4]);
        let f = Augment {
            hflip: true,
            quarter_turns: 0,
        };
        assert_eq!(f.apply_mask(&m).data, vec![3, 2, 1, 6, 5, 4]);
    }

    #[test]
    fn four_turns_are_identity() {
        let m = LabelMask::new(3, 3, (0..9).collect()).unwrap();
        let mut cur = m.clone();
        for _ in 0..4 {
            cur = Augment {
                hflip: false,
                quarter_turns: 1,
            }
            .apply_mask(&cur);
        }
        assert_eq!(cur, m);
    }

    #[test]
    fn image_and_mask_stay_aligned() {
        let s = synth_sample::<f64>(4, 16, 3, 9).unwrap();
        let mut rng = sample_rng(1, 1);
        for _ in 0..16 {
            let a = Augment::sample(&mut rng, true);
            let img = a.apply_image(&s.image);
            let m = a.apply_mask(&s.mask);
            // the label map encoded as an image follows the same mapping
            let as_img = Tensor::<f64>::from_fn(Shape::new(1, 1, 16, 16), |[_, _, r, c]| {
                s.mask.get(r, c) as f64
            });
            let moved = a.apply_image(&as_img);
            for r in 0..16 {
                for c in 0..16 {
                    assert_eq!(moved.at([0, 0, r, c]) as u8, m.get(r, c));
                }
            }
            assert_eq!(img.shape(), s.image.shape());
        }
    }
}
