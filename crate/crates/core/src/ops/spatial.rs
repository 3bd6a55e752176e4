//! Resampling, pooling and channel reductions.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpsampleMode {
    #[default]
    Nearest,
    /// Half-pixel centres, edge clamped.
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelReduce {
    Max,
    Avg,
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape().0;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let plane = x.plane(b, ch);
            for y in 0..oh {
                let row = &plane[(y / factor) * w..(y / factor + 1) * w];
                for xo in 0..ow {
                    out.push(row[xo / factor]);
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c, oh, ow), out).expect("upsample shape")
}

pub fn upsample_nearest_backward<T: Scalar>(g: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, oh, ow] = g.shape().0;
    let (h, w) = (oh / factor, ow / factor);
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            let gp = g.plane(b, ch);
            let base = (b * c + ch) * h * w;
            for y in 0..oh {
                let orow = &mut out[base + (y / factor) * w..base + (y / factor + 1) * w];
                for (xo, &gv) in gp[y * ow..(y + 1) * ow].iter().enumerate() {
                    orow[xo / factor] += gv;
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c, h, w), out).expect("upsample grad shape")
}

/// Source taps `(i0, i1, frac)` for each output index of a 2x bilinear resize.
fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape().0;
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let out_shape = Shape::new(n, c, 2 * h, 2 * w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for b in 0..n {
        for ch in 0..c {
            let p = x.plane(b, ch);
            for &(y0, y1, fy) in &ty {
                let fy = T::lit(fy);
                for &(x0, x1, fx) in &tx {
                    let fx = T::lit(fx);
                    let top = p[y0 * w + x0] * (T::one() - fx) + p[y0 * w + x1] * fx;
                    let bot = p[y1 * w + x0] * (T::one() - fx) + p[y1 * w + x1] * fx;
                    out.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("bilinear shape")
}

pub fn upsample_bilinear2x_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let [n, c, oh, ow] = g.shape().0;
    let (h, w) = (oh / 2, ow / 2);
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            let gp = g.plane(b, ch);
            let base = (b * c + ch) * h * w;
            for (yo, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (xo, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let gv = gp[yo * ow + xo];
                    out[base + y0 * w + x0] += gv * (T::one() - fy) * (T::one() - fx);
                    out[base + y0 * w + x1] += gv * (T::one() - fy) * fx;
                    out[base + y1 * w + x0] += gv * fy * (T::one() - fx);
                    out[base + y1 * w + x1] += gv * fy * fx;
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c, h, w), out).expect("bilinear grad shape")
}

/// Non-overlapping `r x r` mean pooling.
pub fn avgpool2d<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    if r == 0 {
        return Err(Error::InvalidArgument("pool size must be >= 1".into()));
    }
    if h % r != 0 || w % r != 0 {
        return Err(shape_err(
            "avgpool2d",
            format!("spatial dims {h}x{w} not divisible by {r}"),
        ));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h / r, w / r);
    let inv = T::one() / T::lit((r * r) as f64);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            let p = x.plane(b, ch);
            let base = (b * c + ch) * oh * ow;
            for y in 0..h {
                for xi in 0..w {
                    out[base + (y / r) * ow + xi / r] += p[y * w + xi];
                }
            }
            out[base..base + oh * ow].iter_mut().for_each(|v| *v *= inv);
        }
    }
    Tensor::from_vec(Shape::new(n, c, oh, ow), out)
}

pub fn avgpool2d_backward<T: Scalar>(g: &Tensor<T>, r: usize) -> Tensor<T> {
    if r == 1 {
        return g.clone();
    }
    let inv = T::one() / T::lit((r * r) as f64);
    upsample_nearest(g, r).map(|v| v * inv)
}

/// Reduces over channels to shape `(n, 1, h, w)`. For `Max` also returns
/// the winning channel per pixel (first maximum on ties).
pub fn channel_reduce<T: Scalar>(x: &Tensor<T>, kind: ChannelReduce) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape().0;
    let p = h * w;
    let mut out = vec![T::zero(); n * p];
    let mut arg = Vec::new();
    match kind {
        ChannelReduce::Max => {
            arg = vec![0u32; n * p];
            for b in 0..n {
                let o = &mut out[b * p..(b + 1) * p];
                o.copy_from_slice(x.plane(b, 0));
                let a = &mut arg[b * p..(b + 1) * p];
                for ch in 1..c {
                    for ((ov, av), &v) in o.iter_mut().zip(a.iter_mut()).zip(x.plane(b, ch)) {
                        if v > *ov {
                            *ov = v;
                            *av = ch as u32;
                        }
                    }
                }
            }
        }
        ChannelReduce::Avg => {
            let inv = T::one() / T::lit(c as f64);
            for b in 0..n {
                let o = &mut out[b * p..(b + 1) * p];
                for ch in 0..c {
                    for (ov, &v) in o.iter_mut().zip(x.plane(b, ch)) {
                        *ov += v;
                    }
                }
                o.iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    (
        Tensor::from_vec(Shape::new(n, 1, h, w), out).expect("reduce shape"),
        arg,
    )
}

pub fn channel_reduce_backward<T: Scalar>(
    g: &Tensor<T>,
    input: Shape,
    kind: ChannelReduce,
    arg: &[u32],
) -> Tensor<T> {
    let [n, c, h, w] = input.0;
    let p = h * w;
    let mut out = vec![T::zero(); input.numel()];
    for b in 0..n {
        let gp = g.plane(b, 0);
        match kind {
            ChannelReduce::Max => {
                for (i, &gv) in gp.iter().enumerate() {
                    let ch = arg[b * p + i] as usize;
                    out[(b * c + ch) * p + i] += gv;
                }
            }
            ChannelReduce::Avg => {
                let inv = T::one() / T::lit(c as f64);
                for ch in 0..c {
                    for (o, &gv) in out[(b * c + ch) * p..(b * c + ch + 1) * p]
                        .iter_mut()
                        .zip(gp)
                    {
                        *o = gv * inv;
                    }
                }
            }
        }
    }
    Tensor::from_vec(input, out).expect("reduce grad shape")
}
