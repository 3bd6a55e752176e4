//! Dense and depthwise 2-D convolution kernels.
//!
//! Each output element is accumulated as `bias`, then `w * x` over
//! `(c_in, kh, kw)` in ascending order, skipping padded taps. The
//! vectorised loops below keep that order per element.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvGeom { stride, padding }
    }

    pub fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || padded < k {
            return None;
        }
        Some((padded - k) / self.stride + 1)
    }
}

pub fn conv2d_shape(x: Shape, w: Shape, bias: Option<Shape>, g: ConvGeom) -> Result<Shape> {
    let [n, ci, h, wd] = x.0;
    let [co, wci, kh, kw] = w.0;
    if wci != ci {
        return Err(shape_err(
            "conv2d",
            format!("weight {w:?} expects {wci} input channels, input {x:?} has {ci}"),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != co {
            return Err(shape_err(
                "conv2d",
                format!("bias {b:?} for {co} output channels"),
            ));
        }
    }
    let (Some(oh), Some(ow)) = (g.out_len(h, kh), g.out_len(wd, kw)) else {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kh}x{kw} with {g:?} does not fit input {x:?}"),
        ));
    };
    Ok(Shape::new(n, co, oh, ow))
}

/// Output columns `ow` whose input column `ow*stride + k - pad` is in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, g: ConvGeom) -> (usize, usize) {
    let s = g.stride as isize;
    let off = k as isize - g.padding as isize;
    // smallest ow with ow*s + off >= 0
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    // largest ow with ow*s + off <= len-1
    let last = len as isize - 1 - off;
    let hi = if last < 0 {
        0
    } else {
        (last / s + 1).min(out_len as isize)
    };
    let lo = lo.min(out_len as isize);
    (lo as usize, hi.max(lo) as usize)
}

/// Adds `wv * x[row taps]` into one output row.
#[inline]
fn axpy_row<T: Scalar>(
    out: &mut [T],
    xrow: &[T],
    wv: T,
    lo: usize,
    hi: usize,
    g: ConvGeom,
    k: usize,
) {
    if lo >= hi {
        return;
    }
    let start = lo * g.stride + k - g.padding;
    if g.stride == 1 {
        let xs = &xrow[start..start + (hi - lo)];
        for (o, &xv) in out[lo..hi].iter_mut().zip(xs) {
            *o += wv * xv;
        }
    } else {
        for (j, o) in out[lo..hi].iter_mut().enumerate() {
            *o += wv * xrow[start + j * g.stride];
        }
    }
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let out_shape = conv2d_shape(x.shape(), w.shape(), bias.map(|b| b.shape()), g)?;
    let [n, ci, h, wd] = x.shape().0;
    let [co, _, kh, kw] = w.shape().0;
    let [_, _, oh, ow] = out_shape.0;
    let mut out = vec![T::zero(); out_shape.numel()];
    let xd = x.data();
    let wdat = w.data();
    let pointwise = kh == 1 && kw == 1 && g.stride == 1 && g.padding == 0;
    let col_ranges: Vec<(usize, usize)> = (0..kw).map(|k| valid_range(ow, wd, k, g)).collect();

    for b in 0..n {
        for o in 0..co {
            let oplane = &mut out[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            let bv = bias.map_or(T::zero(), |bt| bt.data()[o]);
            oplane.iter_mut().for_each(|v| *v = bv);
            for c in 0..ci {
                let xplane = &xd[(b * ci + c) * h * wd..(b * ci + c + 1) * h * wd];
                let wbase = (o * ci + c) * kh * kw;
                if pointwise {
                    let wv = wdat[wbase];
                    for (ov, &xv) in oplane.iter_mut().zip(xplane) {
                        *ov += wv * xv;
                    }
                    continue;
                }
                // Per output element the accumulation order is (kh, kw) ascending
                // within this input channel, so rows are visited per (ky, kx) but
                // each output row only receives its own taps in that order.
                for y in 0..oh {
                    let orow = &mut oplane[y * ow..(y + 1) * ow];
                    for ky in 0..kh {
                        let iy = (y * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * wd..(iy as usize + 1) * wd];
                        for kx in 0..kw {
                            let (lo, hi) = col_ranges[kx];
                            axpy_row(orow, xrow, wdat[wbase + ky * kw + kx], lo, hi, g, kx);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients of `conv2d` with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    g: ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let [n, ci, h, wd] = x.shape().0;
    let [co, _, kh, kw] = w.shape().0;
    let [_, _, oh, ow] = gout.shape().0;
    let xd = x.data();
    let wdat = w.data();
    let gd = gout.data();
    let col_ranges: Vec<(usize, usize)> = (0..kw).map(|k| valid_range(ow, wd, k, g)).collect();

    let mut gb = vec![T::zero(); co];
    for b in 0..n {
        for o in 0..co {
            let gp = &gd[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            gb[o] += gp.iter().copied().sum::<T>();
        }
    }

    let gw = need_w.then(|| {
        let mut gw = vec![T::zero(); w.numel()];
        for b in 0..n {
            for o in 0..co {
                let gp = &gd[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
                for c in 0..ci {
                    let xplane = &xd[(b * ci + c) * h * wd..(b * ci + c + 1) * h * wd];
                    let wbase = (o * ci + c) * kh * kw;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (lo, hi) = col_ranges[kx];
                            if lo >= hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for y in 0..oh {
                                let iy = (y * g.stride + ky) as isize - g.padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &xplane[iy as usize * wd..(iy as usize + 1) * wd];
                                let grow = &gp[y * ow..(y + 1) * ow];
                                let start = lo * g.stride + kx - g.padding;
                                if g.stride == 1 {
                                    acc += grow[lo..hi]
                                        .iter()
                                        .zip(&xrow[start..start + hi - lo])
                                        .map(|(&a, &b)| a * b)
                                        .sum::<T>();
                                } else {
                                    for (j, &gv) in grow[lo..hi].iter().enumerate() {
                                        acc += gv * xrow[start + j * g.stride];
                                    }
                                }
                            }
                            gw[wbase + ky * kw + kx] += acc;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(w.shape(), gw).expect("weight grad shape")
    });

    let gx = need_x.then(|| {
        let mut gx = vec![T::zero(); x.numel()];
        for b in 0..n {
            for o in 0..co {
                let gp = &gd[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
                for c in 0..ci {
                    let gxp = &mut gx[(b * ci + c) * h * wd..(b * ci + c + 1) * h * wd];
                    let wbase = (o * ci + c) * kh * kw;
                    for y in 0..oh {
                        let grow = &gp[y * ow..(y + 1) * ow];
                        for ky in 0..kh {
                            let iy = (y * g.stride + ky) as isize - g.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &mut gxp[iy as usize * wd..(iy as usize + 1) * wd];
                            for kx in 0..kw {
                                let (lo, hi) = col_ranges[kx];
                                if lo >= hi {
                                    continue;
                                }
                                let wv = wdat[wbase + ky * kw + kx];
                                let start = lo * g.stride + kx - g.padding;
                                if g.stride == 1 {
                                    for (xv, &gv) in
                                        xrow[start..start + hi - lo].iter_mut().zip(&grow[lo..hi])
                                    {
                                        *xv += wv * gv;
                                    }
                                } else {
                                    for (j, &gv) in grow[lo..hi].iter().enumerate() {
                                        xrow[start + j * g.stride] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(x.shape(), gx).expect("input grad shape")
    });

    (
        gx,
        gw,
        Tensor::from_vec(Shape::new(1, co, 1, 1), gb).expect("bias grad shape"),
    )
}

/// Per-channel convolution, stride 1. `w` has shape `(c, 1, k, k)`.
pub fn depthwise_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, wd] = x.shape().0;
    let [wc, one, kh, kw] = w.shape().0;
    if wc != c || one != 1 {
        return Err(shape_err(
            "depthwise_conv2d",
            format!("weight {:?} for input {:?}", w.shape(), x.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != c {
            return Err(shape_err(
                "depthwise_conv2d",
                format!("bias {:?} for {c} channels", b.shape()),
            ));
        }
    }
    let g = ConvGeom::new(1, padding);
    let (Some(oh), Some(ow)) = (g.out_len(h, kh), g.out_len(wd, kw)) else {
        return Err(shape_err(
            "depthwise_conv2d",
            "kernel larger than padded input",
        ));
    };
    let col_ranges: Vec<(usize, usize)> = (0..kw).map(|k| valid_range(ow, wd, k, g)).collect();
    let out_shape = Shape::new(n, c, oh, ow);
    let mut out = vec![T::zero(); out_shape.numel()];
    for b in 0..n {
        for ch in 0..c {
            let xplane = x.plane(b, ch);
            let oplane = &mut out[(b * c + ch) * oh * ow..(b * c + ch + 1) * oh * ow];
            let bv = bias.map_or(T::zero(), |bt| bt.data()[ch]);
            oplane.iter_mut().for_each(|v| *v = bv);
            let wbase = ch * kh * kw;
            for y in 0..oh {
                let orow = &mut oplane[y * ow..(y + 1) * ow];
                for ky in 0..kh {
                    let iy = (y + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xplane[iy as usize * wd..(iy as usize + 1) * wd];
                    for kx in 0..kw {
                        let (lo, hi) = col_ranges[kx];
                        axpy_row(orow, xrow, w.data()[wbase + ky * kw + kx], lo, hi, g, kx);
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    padding: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, wd] = x.shape().0;
    let [_, _, kh, kw] = w.shape().0;
    let [_, _, oh, ow] = gout.shape().0;
    let g = ConvGeom::new(1, padding);
    let col_ranges: Vec<(usize, usize)> = (0..kw).map(|k| valid_range(ow, wd, k, g)).collect();
    let mut gx = vec![T::zero(); x.numel()];
    let mut gw = vec![T::zero(); w.numel()];
    let mut gb = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let xplane = x.plane(b, ch);
            let gp = gout.plane(b, ch);
            gb[ch] += gp.iter().copied().sum::<T>();
            let gxp = &mut gx[(b * c + ch) * h * wd..(b * c + ch + 1) * h * wd];
            let wbase = ch * kh * kw;
            for y in 0..oh {
                let grow = &gp[y * ow..(y + 1) * ow];
                for ky in 0..kh {
                    let iy = (y + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..kw {
                        let (lo, hi) = col_ranges[kx];
                        if lo >= hi {
                            continue;
                        }
                        let start = lo + kx - padding;
                        let wv = w.data()[wbase + ky * kw + kx];
                        let xrow = &xplane[iy * wd + start..iy * wd + start + hi - lo];
                        gw[wbase + ky * kw + kx] += grow[lo..hi]
                            .iter()
                            .zip(xrow)
                            .map(|(&a, &b)| a * b)
                            .sum::<T>();
                        let gxrow = &mut gxp[iy * wd + start..iy * wd + start + hi - lo];
                        for (xv, &gv) in gxrow.iter_mut().zip(&grow[lo..hi]) {
                            *xv += wv * gv;
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("input grad"),
        Tensor::from_vec(w.shape(), gw).expect("weight grad"),
        Tensor::from_vec(Shape::new(1, c, 1, 1), gb).expect("bias grad"),
    )
}
