//! Batch normalisation over (n, h, w) per channel.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Normalised activations plus what backward needs.
pub struct BnForward<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Biased batch variance.
    pub batch_var: Vec<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: f64) -> Result<()> {
    let c = x.shape().c();
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err(
            "batchnorm2d",
            format!(
                "gamma/beta lengths {}/{} for {c} channels",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm eps must be > 0, got {eps}"
        )));
    }
    Ok(())
}

fn normalise<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
) -> (Tensor<T>, Vec<T>) {
    let [n, c, _, _] = x.shape().0;
    let mut out = x.clone();
    let mut xhat = vec![T::zero(); x.numel()];
    let p = x.shape().plane();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * p;
            let (m, s, g, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let xs = &x.data()[base..base + p];
            let hs = &mut xhat[base..base + p];
            let os = &mut out.data_mut()[base..base + p];
            for ((o, h), &v) in os.iter_mut().zip(hs.iter_mut()).zip(xs) {
                *h = (v - m) * s;
                *o = g * *h + be;
            }
        }
    }
    (out, xhat)
}

/// Training mode: normalise with batch statistics.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<BnForward<T>> {
    check(x, gamma, beta, eps)?;
    let [n, c, _, _] = x.shape().0;
    let p = x.shape().plane();
    let m = T::lit((n * p) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        // shifted by the first element so constant channels give an exact mean
        let shift = x.plane(0, ch)[0];
        let mut s = T::zero();
        for b in 0..n {
            s += x.plane(b, ch).iter().map(|&a| a - shift).sum::<T>();
        }
        mean[ch] = shift + s / m;
        let mut v = T::zero();
        for b in 0..n {
            v += x
                .plane(b, ch)
                .iter()
                .map(|&a| (a - mean[ch]) * (a - mean[ch]))
                .sum::<T>();
        }
        var[ch] = v / m;
    }
    let e = T::lit(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + e).sqrt()).collect();
    let (out, xhat) = normalise(x, gamma, beta, &mean, &inv_std);
    Ok(BnForward {
        out,
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    })
}

/// Inference mode: normalise with stored running statistics.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<BnForward<T>> {
    check(x, gamma, beta, eps)?;
    if running_mean.len() != gamma.len() || running_var.len() != gamma.len() {
        return Err(shape_err("batchnorm2d", "running statistics length"));
    }
    let e = T::lit(eps);
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|&v| T::one() / (v + e).sqrt())
        .collect();
    let (out, xhat) = normalise(x, gamma, beta, running_mean, &inv_std);
    Ok(BnForward {
        out,
        xhat,
        inv_std,
        batch_mean: running_mean.to_vec(),
        batch_var: running_var.to_vec(),
    })
}

/// Momentum update of running statistics; the stored variance is unbiased.
pub fn update_running<T: Scalar>(
    running_mean: &mut [T],
    running_var: &mut [T],
    batch_mean: &[T],
    batch_var: &[T],
    count: usize,
    momentum: f64,
) {
    let mom = T::lit(momentum);
    let keep = T::one() - mom;
    let unbias = if count > 1 {
        T::lit(count as f64 / (count - 1) as f64)
    } else {
        T::one()
    };
    for ch in 0..running_mean.len() {
        running_mean[ch] = keep * running_mean[ch] + mom * batch_mean[ch];
        running_var[ch] = keep * running_var[ch] + mom * batch_var[ch] * unbias;
    }
}

/// Returns (dx, dgamma, dbeta). `train` selects batch-statistics backward.
pub fn batchnorm_backward<T: Scalar>(
    gout: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    train: bool,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c, _, _] = gout.shape().0;
    let p = gout.shape().plane();
    let g = gout.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * p;
            for i in base..base + p {
                dgamma[ch] += g[i] * xhat[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    let m = T::lit((n * p) as f64);
    for ch in 0..c {
        let scale = gamma[ch] * inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * p;
            for i in base..base + p {
                dx[i] = if train {
                    scale / m * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                } else {
                    scale * g[i]
                };
            }
        }
    }
    (
        Tensor::from_vec(gout.shape(), dx).expect("bn grad"),
        dgamma,
        dbeta,
    )
}
