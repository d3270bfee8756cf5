use rand::Rng;

use super::{he_uniform, take_cache};
use crate::error::{Error, Result};
use crate::nn::module::{join, Mode, Module, ParamKind, Visitor, VisitorMut};
use crate::nn::tensor::{Scalar, Tensor};

/// Fully connected layer. Inputs of rank > 2 are flattened per example.
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: he_uniform(vec![out_features, in_features], in_features, rng),
            bias: Tensor::zeros(vec![out_features]),
            cache: None,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        if x.shape().len() < 2 {
            return Err(Error::shape("dense input", "rank >= 2", x.shape()));
        }
        let b = x.batch();
        let feat = x.numel() / b.max(1);
        if feat != self.in_features {
            return Err(Error::shape("dense features", self.in_features, feat));
        }
        Ok(b)
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.check(x)?;
        let (fi, fo) = (self.in_features, self.out_features);
        let (w, bias, xd) = (self.weight.data(), self.bias.data(), x.data());
        let mut out = vec![T::zero(); b * fo];
        for bi in 0..b {
            let xr = &xd[bi * fi..(bi + 1) * fi];
            for o in 0..fo {
                let wr = &w[o * fi..(o + 1) * fi];
                out[bi * fo + o] = bias[o] + wr.iter().zip(xr).map(|(&a, &c)| a * c).sum::<T>();
            }
        }
        Tensor::new(vec![b, fo], out)
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.compute(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.compute(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, "dense")?;
        let b = x.batch();
        let (fi, fo) = (self.in_features, self.out_features);
        if grad.shape() != [b, fo] {
            return Err(Error::shape("dense grad", [b, fo], grad.shape()));
        }
        let (xd, gd) = (x.data(), grad.data());
        let mut dw = vec![T::zero(); fo * fi];
        let mut db = vec![T::zero(); fo];
        let mut dx = vec![T::zero(); b * fi];
        let w = self.weight.data();
        for bi in 0..b {
            let xr = &xd[bi * fi..(bi + 1) * fi];
            let dxr = &mut dx[bi * fi..(bi + 1) * fi];
            for o in 0..fo {
                let g = gd[bi * fo + o];
                db[o] += g;
                let wr = &w[o * fi..(o + 1) * fi];
                let dwr = &mut dw[o * fi..(o + 1) * fi];
                for i in 0..fi {
                    dwr[i] += g * xr[i];
                    dxr[i] += g * wr[i];
                }
            }
        }
        self.weight.accumulate_grad(&dw);
        self.bias.accumulate_grad(&db);
        Tensor::new(x.shape().to_vec(), dx)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), &self.weight, ParamKind::Trainable);
        f(&join(prefix, "bias"), &self.bias, ParamKind::Trainable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        f(&join(prefix, "weight"), &mut self.weight, ParamKind::Trainable);
        f(&join(prefix, "bias"), &mut self.bias, ParamKind::Trainable);
    }
}
