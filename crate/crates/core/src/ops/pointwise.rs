//! Activations and elementwise combinators.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// sqrt(2 / pi) and the cubic coefficient of the tanh GELU approximation.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044_715;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[inline]
pub fn gelu_scalar<T: Scalar>(v: T) -> T {
    let a = T::lit(GELU_SQRT_2_OVER_PI);
    let c = T::lit(GELU_CUBIC);
    let half = T::lit(0.5);
    half * v * (T::one() + (a * (v + c * v * v * v)).tanh())
}

#[inline]
pub fn gelu_grad_scalar<T: Scalar>(v: T) -> T {
    let a = T::lit(GELU_SQRT_2_OVER_PI);
    let c = T::lit(GELU_CUBIC);
    let half = T::lit(0.5);
    let t = (a * (v + c * v * v * v)).tanh();
    half * (T::one() + t) + half * v * (T::one() - t * t) * a * (T::one() + T::lit(3.0) * c * v * v)
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

/// Overflow-free logistic function.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Softmax across channels, independently per (n, pixel).
pub fn softmax_channel<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = x.shape().0;
    let p = x.shape().plane();
    let mut out = x.clone();
    let d = x.data();
    let o = out.data_mut();
    let mut mx = vec![T::zero(); p];
    let mut sum = vec![T::zero(); p];
    for b in 0..n {
        let base = b * c * p;
        mx.copy_from_slice(&d[base..base + p]);
        for ch in 1..c {
            for (m, &v) in mx.iter_mut().zip(&d[base + ch * p..base + (ch + 1) * p]) {
                if v > *m {
                    *m = v;
                }
            }
        }
        sum.iter_mut().for_each(|s| *s = T::zero());
        for ch in 0..c {
            let os = &mut o[base + ch * p..base + (ch + 1) * p];
            for ((ov, &m), s) in os.iter_mut().zip(&mx).zip(sum.iter_mut()) {
                *ov = (*ov - m).exp();
                *s += *ov;
            }
        }
        for ch in 0..c {
            for (ov, &s) in o[base + ch * p..base + (ch + 1) * p].iter_mut().zip(&sum) {
                *ov /= s;
            }
        }
    }
    out
}

/// Vector-Jacobian product of channel softmax given its output `y`.
pub fn softmax_channel_backward<T: Scalar>(y: &Tensor<T>, g: &[T]) -> Vec<T> {
    let [n, c, _, _] = y.shape().0;
    let p = y.shape().plane();
    let yd = y.data();
    let mut out = vec![T::zero(); yd.len()];
    let mut dot = vec![T::zero(); p];
    for b in 0..n {
        let base = b * c * p;
        dot.iter_mut().for_each(|v| *v = T::zero());
        for ch in 0..c {
            let r = base + ch * p..base + (ch + 1) * p;
            for ((d, &gv), &yv) in dot.iter_mut().zip(&g[r.clone()]).zip(&yd[r]) {
                *d += gv * yv;
            }
        }
        for ch in 0..c {
            let r = base + ch * p..base + (ch + 1) * p;
            for (((o, &gv), &yv), &d) in out[r.clone()]
                .iter_mut()
                .zip(&g[r.clone()])
                .zip(&yd[r])
                .zip(&dot)
            {
                *o = yv * (gv - d);
            }
        }
    }
    out
}

fn zip_map<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    a.check_same_shape(b, op)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, "add", |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, "sub", |x, y| x - y)
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_map(a, b, "hadamard", |x, y| x * y)
}

/// Multiplies `x` by a per-(n, pixel) mask of shape `(n, 1, h, w)`.
pub fn mul_broadcast_channel<T: Scalar>(x: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    if mask.shape() != Shape::new(n, 1, h, w) {
        return Err(shape_err(
            "hadamard",
            format!(
                "mask {:?} does not broadcast over {:?}",
                mask.shape(),
                x.shape()
            ),
        ));
    }
    let p = h * w;
    let mut out = x.clone();
    for b in 0..n {
        let m = mask.plane(b, 0);
        for ch in 0..c {
            let base = (b * c + ch) * p;
            for (o, &mv) in out.data_mut()[base..base + p].iter_mut().zip(m) {
                *o *= mv;
            }
        }
    }
    Ok(out)
}

pub fn concat_channel<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.shape().0;
    let [nb, cb, hb, wb] = b.shape().0;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(shape_err(
            "concat_channel",
            format!(
                "{:?} and {:?} differ outside the channel axis",
                a.shape(),
                b.shape()
            ),
        ));
    }
    let p = ha * wa;
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..na {
        data.extend_from_slice(&a.data()[n * ca * p..(n + 1) * ca * p]);
        data.extend_from_slice(&b.data()[n * cb * p..(n + 1) * cb * p]);
    }
    Tensor::from_vec(Shape::new(na, ca + cb, ha, wa), data)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channel<T: Scalar>(g: &[T], shape_a: Shape, shape_b: Shape) -> (Vec<T>, Vec<T>) {
    let [n, ca, h, w] = shape_a.0;
    let cb = shape_b.c();
    let p = h * w;
    let mut ga = Vec::with_capacity(shape_a.numel());
    let mut gb = Vec::with_capacity(shape_b.numel());
    for b in 0..n {
        let base = b * (ca + cb) * p;
        ga.extend_from_slice(&g[base..base + ca * p]);
        gb.extend_from_slice(&g[base + ca * p..base + (ca + cb) * p]);
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activation_fixed_points() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        let z = Tensor::<f64>::zeros(Shape::new(1, 4, 2, 2));
        assert!(softmax_channel(&z)
            .data()
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid_scalar(-1000.0f64), 0.0);
        assert_eq!(sigmoid_scalar(1000.0f64), 1.0);
        assert!(sigmoid_scalar(-80.0f32) > 0.0);
    }

    #[test]
    fn gelu_tracks_exact_form() {
        // exact GELU = x * Phi(x); tanh form stays within 1e-3 on [-4, 4]
        for i in -40..=40 {
            let x = i as f64 / 10.0;
            let phi = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
            assert!((gelu_scalar(x) - x * phi).abs() < 1e-3, "x={x}");
        }
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        y.copysign(x)
    }

    #[test]
    fn concat_and_split_invert() {
        let a = Tensor::<f32>::ones(Shape::new(1, 2, 4, 4));
        let b = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let c = concat_channel(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        let (ga, gb) = split_channel(c.data(), a.shape(), b.shape());
        assert_eq!(ga, a.data());
        assert_eq!(gb, b.data());
        assert!(concat_channel(&a, &Tensor::zeros(Shape::new(1, 1, 2, 4))).is_err());
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 3, 3), 1.0, &mut rng);
        assert_eq!(hadamard(&x, &Tensor::ones(x.shape())).unwrap(), x);
        assert!(add(&x, &Tensor::ones(Shape::new(1, 1, 1, 1))).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(seed in any::<u64>(), c in 1usize..6, scale in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::randn(Shape::new(2, c, 3, 3), scale, &mut rng);
            let y = softmax_channel(&x);
            for b in 0..2 {
                for p in 0..9 {
                    let s: f64 = (0..c).map(|ch| y.plane(b, ch)[p]).sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            }
            prop_assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(sigmoid(&x).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
