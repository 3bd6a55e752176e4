use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(0.5),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr >= 0.0
            && self.weight_decay >= 0.0
            && self.eps > 0.0
            && unit(self.beta1)
            && unit(self.beta2))
        {
            return Err(Error::InvalidArgument(format!(
                "invalid AdamW settings {self:?}"
            )));
        }
        if matches!(self.grad_clip, Some(c) if c <= 0.0) {
            return Err(Error::InvalidArgument("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// AdamW moments for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamWConfig) -> Result<Self> {
        cfg.validate()?;
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Ok(AdamW {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// Global L2 norm of all parameter gradients.
    pub fn grad_norm(store: &ParamStore<T>) -> f64 {
        store
            .params()
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// One update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.params().len() != self.m.len() {
            return Err(Error::InvalidArgument(
                "optimizer state does not match parameter store".into(),
            ));
        }
        self.step += 1;
        let c = &self.cfg;
        let clip = match c.grad_clip {
            Some(max) => {
                let norm = Self::grad_norm(store);
                if norm > max {
                    T::lit(max / norm)
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let decay = T::lit(c.lr * c.weight_decay);
        let eps = T::lit(c.eps);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let grads = p.grad.data().to_vec();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[j] * clip;
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w = *w - decay * *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn store(v: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add_param("w", Tensor::scalar(v)).unwrap();
        s.param_mut(id).grad = Tensor::scalar(g);
        s
    }

    fn no_clip() -> AdamWConfig {
        AdamWConfig {
            grad_clip: None,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut s = store(1.5, 0.0);
        let mut opt = AdamW::new(
            &s,
            AdamWConfig {
                weight_decay: 0.0,
                ..no_clip()
            },
        )
        .unwrap();
        opt.step(&mut s).unwrap();
        assert_eq!(s.params()[0].value.item(), 1.5);
    }

    #[test]
    fn one_step_closed_form() {
        let (w0, g, lr, wd) = (2.0, 0.3, 1e-2, 1e-1);
        let mut s = store(w0, g);
        let cfg = AdamWConfig {
            lr,
            weight_decay: wd,
            ..no_clip()
        };
        let mut opt = AdamW::new(&s, cfg).unwrap();
        opt.step(&mut s).unwrap();
        // first step: mhat = g, vhat = g^2
        let expect = w0 - lr * wd * w0 - lr * g / (g.abs() + 1e-8);
        assert!((s.params()[0].value.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks_by_lr_wd() {
        let mut s = store(4.0, 0.0);
        let mut opt = AdamW::new(
            &s,
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.5,
                ..no_clip()
            },
        )
        .unwrap();
        opt.step(&mut s).unwrap();
        assert!((s.params()[0].value.item() - (4.0 - 0.1 * 0.5 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn clip_scales_gradient() {
        let mut s = ParamStore::<f64>::new();
        let id = s
            .add_param("w", Tensor::zeros(Shape::new(1, 2, 1, 1)))
            .unwrap();
        s.param_mut(id).grad = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![3.0, 4.0]).unwrap();
        let mut opt = AdamW::new(
            &s,
            AdamWConfig {
                weight_decay: 0.0,
                grad_clip: Some(0.5),
                ..AdamWConfig::default()
            },
        )
        .unwrap();
        opt.step(&mut s).unwrap();
        let (m, _) = opt.moments();
        assert!((m[0].data()[0] - 0.1 * 0.3).abs() < 1e-15);
        assert!((m[0].data()[1] - 0.1 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut s = store(3.0, 0.0);
        let mut opt = AdamW::new(
            &s,
            AdamWConfig {
                lr: 0.05,
                ..no_clip()
            },
        )
        .unwrap();
        let f = |w: f64| (w - 1.0) * (w - 1.0);
        let mut prev = f(3.0);
        for _ in 0..20 {
            let w = s.params()[0].value.item();
            s.params_mut()[0].grad = Tensor::scalar(2.0 * (w - 1.0));
            opt.step(&mut s).unwrap();
            let now = f(s.params()[0].value.item());
            assert!(now < prev);
            prev = now;
        }
    }
}
