use std::marker::PhantomData;

use super::take_cache;
use crate::error::{Error, Result};
use crate::nn::module::{Mode, Module};
use crate::nn::tensor::{Scalar, Tensor};

/// Mean over the last axis: `[B, ..., T] -> [B, ...]`.
pub struct MeanPool<T> {
    shape: Option<Vec<usize>>,
    _t: PhantomData<T>,
}

impl<T> Default for MeanPool<T> {
    fn default() -> Self {
        Self {
            shape: None,
            _t: PhantomData,
        }
    }
}

impl<T: Scalar> Module<T> for MeanPool<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.shape = Some(x.shape().to_vec());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() < 3 || s[s.len() - 1] == 0 {
            return Err(Error::shape("mean_pool input", "[B, C, .., T>0]", s));
        }
        let t = s[s.len() - 1];
        let inv = T::of(1.0 / t as f64);
        let data = x.data().chunks(t).map(|r| r.iter().copied().sum::<T>() * inv).collect();
        Tensor::new(s[..s.len() - 1].to_vec(), data)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = take_cache(&mut self.shape, "mean_pool")?;
        let t = shape[shape.len() - 1];
        if grad.shape() != &shape[..shape.len() - 1] {
            return Err(Error::shape("mean_pool grad", &shape[..shape.len() - 1], grad.shape()));
        }
        let inv = T::of(1.0 / t as f64);
        let mut dx = Vec::with_capacity(grad.numel() * t);
        for &g in grad.data() {
            dx.extend(std::iter::repeat_n(g * inv, t));
        }
        Tensor::new(shape, dx)
    }
}

/// Max pooling over the two trailing axes of `[B, C, H, W]`.
pub struct MaxPool2d<T> {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
    _t: PhantomData<T>,
}

impl<T: Scalar> MaxPool2d<T> {
    pub fn new(kernel: usize, stride: usize) -> Self {
        assert!(kernel > 0 && stride > 0);
        Self {
            kernel,
            stride,
            cache: None,
            _t: PhantomData,
        }
    }

    fn compute(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        x.expect_rank(4, "max_pool2d input")?;
        let s = x.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h < self.kernel || w < self.kernel {
            return Err(Error::shape("max_pool2d spatial", format!(">= {}", self.kernel), (h, w)));
        }
        let ho = (h - self.kernel) / self.stride + 1;
        let wo = (w - self.kernel) / self.stride + 1;
        let xd = x.data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut arg = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for dy in 0..self.kernel {
                        for dx in 0..self.kernel {
                            let i = base + (oy * self.stride + dy) * w + ox * self.stride + dx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Tensor::new(vec![b, c, ho, wo], out)?, arg))
    }
}

impl<T: Scalar> Module<T> for MaxPool2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (y, arg) = self.compute(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(x)?.0)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = take_cache(&mut self.cache, "max_pool2d")?;
        if grad.numel() != arg.len() {
            return Err(Error::shape("max_pool2d grad", arg.len(), grad.numel()));
        }
        let mut dx = vec![T::zero(); shape.iter().product()];
        for (&i, &g) in arg.iter().zip(grad.data()) {
            dx[i] += g;
        }
        Tensor::new(shape, dx)
    }
}
