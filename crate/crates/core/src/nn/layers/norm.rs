use super::take_cache;
use crate::error::{Error, Result};
use crate::nn::module::{join, Mode, Module, ParamKind, Visitor, VisitorMut};
use crate::nn::tensor::{Scalar, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `[B, C, ...]`.
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<Cache<T>>,
}

struct Cache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Tensor::full(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
            cache: None,
        }
    }

    /// Overwrite the running statistics used in eval mode.
    pub fn set_running_stats(&mut self, mean: &[T], var: &[T]) {
        self.running_mean.data_mut().copy_from_slice(mean);
        self.running_var.data_mut().copy_from_slice(var);
    }

    /// (batch, channels, inner) for a `[B, C, ...]` input.
    fn dims(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(Error::shape("batchnorm input", format!("[B, {}, ...]", self.channels), s));
        }
        Ok((s[0], s[1], s[2..].iter().product()))
    }

    /// Per-channel mean and biased variance of a batch.
    pub fn batch_stats(&self, x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        let (b, c, inner) = self.dims(x)?;
        let n = T::of((b * inner) as f64);
        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s += xd[(bi * c + ch) * inner..(bi * c + ch + 1) * inner].iter().copied().sum();
            }
            let m = s / n;
            let mut v = T::zero();
            for bi in 0..b {
                for &xv in &xd[(bi * c + ch) * inner..(bi * c + ch + 1) * inner] {
                    v += (xv - m) * (xv - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / n;
        }
        Ok((mean, var))
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], var: &[T]) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let (b, c, inner) = self.dims(x)?;
        let inv_std: Vec<T> = var.iter().map(|&v| (v + T::of(EPS)).sqrt().recip()).collect();
        let (g, bt) = (self.gamma.data(), self.beta.data());
        let xd = x.data();
        let mut x_hat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * inner..(bi * c + ch + 1) * inner;
                for i in r {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    x_hat[i] = h;
                    y[i] = g[ch] * h + bt[ch];
                }
            }
        }
        Ok((Tensor::new(x.shape().to_vec(), y)?, x_hat, inv_std))
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (mean, var) = match mode {
            Mode::Train => {
                let (m, v) = self.batch_stats(x)?;
                let mom = T::of(MOMENTUM);
                for ch in 0..self.channels {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - mom) * *rm + mom * m[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - mom) * *rv + mom * v[ch];
                }
                (m, v)
            }
            Mode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
        };
        let (y, x_hat, inv_std) = self.normalize(x, &mean, &var)?;
        self.cache = Some(Cache {
            x_hat,
            inv_std,
            shape: x.shape().to_vec(),
            mode,
        });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.normalize(x, self.running_mean.data(), self.running_var.data())?.0)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = take_cache(&mut self.cache, "batchnorm")?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(Error::shape("batchnorm grad", &cache.shape, grad.shape()));
        }
        let (b, c) = (cache.shape[0], cache.shape[1]);
        let inner: usize = cache.shape[2..].iter().product();
        let n = T::of((b * inner) as f64);
        let gd = grad.data();
        let gamma = self.gamma.data().to_vec();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = vec![T::zero(); gd.len()];
        for ch in 0..c {
            let idx = |bi: usize| (bi * c + ch) * inner..(bi * c + ch + 1) * inner;
            let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
            for bi in 0..b {
                for i in idx(bi) {
                    sum_g += gd[i];
                    sum_gx += gd[i] * cache.x_hat[i];
                }
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let k = gamma[ch] * cache.inv_std[ch];
            for bi in 0..b {
                for i in idx(bi) {
                    dx[i] = match cache.mode {
                        Mode::Train => k * (gd[i] - sum_g / n - cache.x_hat[i] * sum_gx / n),
                        Mode::Eval => k * gd[i],
                    };
                }
            }
        }
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
        Tensor::new(cache.shape, dx)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "gamma"), &self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &self.beta, ParamKind::Trainable);
        f(&join(prefix, "running_mean"), &self.running_mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, ParamKind::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        f(&join(prefix, "gamma"), &mut self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &mut self.beta, ParamKind::Trainable);
        f(&join(prefix, "running_mean"), &mut self.running_mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &mut self.running_var, ParamKind::Buffer);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recorded_stats_normalize_the_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..4 * 3 * 20).map(|_| 5.0 + 3.0 * rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![4, 3, 20], data).unwrap();
        let mut bn = BatchNorm::<f64>::new(3);
        let (m, v) = bn.batch_stats(&x).unwrap();
        bn.set_running_stats(&m, &v);
        let y = bn.infer(&x).unwrap();
        let (ym, yv) = bn.batch_stats(&y).unwrap();
        for c in 0..3 {
            assert!(ym[c].abs() < 1e-5);
            assert!((yv[c] - 1.0).abs() < 1e-5);
        }
    }
}
