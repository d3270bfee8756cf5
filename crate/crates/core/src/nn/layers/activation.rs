use std::marker::PhantomData;

use super::take_cache;
use crate::error::{Error, Result};
use crate::nn::module::{Mode, Module};
use crate::nn::tensor::{Scalar, Tensor};

fn check_grad<T: Scalar>(grad: &Tensor<T>, shape: &[usize], ctx: &str) -> Result<()> {
    if grad.shape() != shape {
        return Err(Error::shape(ctx, shape, grad.shape()));
    }
    Ok(())
}

pub struct Relu<T> {
    mask: Option<(Vec<bool>, Vec<usize>)>,
    _t: PhantomData<T>,
}

impl<T> Default for Relu<T> {
    fn default() -> Self {
        Self {
            mask: None,
            _t: PhantomData,
        }
    }
}

impl<T: Scalar> Module<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.mask = Some((x.data().iter().map(|&v| v > T::zero()).collect(), x.shape().to_vec()));
        self.infer(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(T::zero())).collect())
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (mask, shape) = take_cache(&mut self.mask, "relu")?;
        check_grad(grad, &shape, "relu grad")?;
        let d = grad
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::new(shape, d)
    }
}

pub struct Sigmoid<T> {
    out: Option<Tensor<T>>,
}

impl<T> Default for Sigmoid<T> {
    fn default() -> Self {
        Self { out: None }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Module<T> for Sigmoid<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.out = Some(y.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| sigmoid(v)).collect())
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = take_cache(&mut self.out, "sigmoid")?;
        check_grad(grad, y.shape(), "sigmoid grad")?;
        let d = grad
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect();
        Tensor::new(y.shape().to_vec(), d)
    }
}

/// Softmax over the last axis.
pub struct Softmax<T> {
    out: Option<Tensor<T>>,
}

impl<T> Default for Softmax<T> {
    fn default() -> Self {
        Self { out: None }
    }
}

pub(crate) fn softmax_rows<T: Scalar>(data: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (row, orow) in data.chunks(k).zip(out.chunks_mut(k)) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - m).exp();
            z += *o;
        }
        orow.iter_mut().for_each(|o| *o = *o / z);
    }
    out
}

impl<T: Scalar> Module<T> for Softmax<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.out = Some(y.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let k = *x.shape().last().ok_or_else(|| Error::shape("softmax input", "rank >= 1", x.shape()))?;
        Tensor::new(x.shape().to_vec(), softmax_rows(x.data(), k))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = take_cache(&mut self.out, "softmax")?;
        check_grad(grad, y.shape(), "softmax grad")?;
        let k = *y.shape().last().unwrap();
        let mut d = vec![T::zero(); y.numel()];
        for ((yr, gr), dr) in y.data().chunks(k).zip(grad.data().chunks(k)).zip(d.chunks_mut(k)) {
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for i in 0..k {
                dr[i] = yr[i] * (gr[i] - dot);
            }
        }
        Tensor::new(y.shape().to_vec(), d)
    }
}

/// Max-feature-map: splits axis 1 into halves and keeps the elementwise max.
pub struct Mfm<T> {
    cache: Option<(Vec<bool>, Vec<usize>)>,
    _t: PhantomData<T>,
}

impl<T> Default for Mfm<T> {
    fn default() -> Self {
        Self {
            cache: None,
            _t: PhantomData,
        }
    }
}

impl<T: Scalar> Mfm<T> {
    fn compute(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<bool>)> {
        let s = x.shape();
        if s.len() < 2 || s[1] % 2 != 0 {
            return Err(Error::shape("mfm input", "[B, even C, ...]", s));
        }
        let (b, c) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let half = c / 2 * inner;
        let xd = x.data();
        let mut out = Vec::with_capacity(b * half);
        // true where the first half wins
        let mut first = Vec::with_capacity(b * half);
        for bi in 0..b {
            let base = bi * c * inner;
            for i in 0..half {
                let (a, z) = (xd[base + i], xd[base + half + i]);
                first.push(a >= z);
                out.push(a.max(z));
            }
        }
        let mut shape = s.to_vec();
        shape[1] = c / 2;
        Ok((Tensor::new(shape, out)?, first))
    }
}

impl<T: Scalar> Module<T> for Mfm<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (y, first) = self.compute(x)?;
        self.cache = Some((first, x.shape().to_vec()));
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(x)?.0)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (first, shape) = take_cache(&mut self.cache, "mfm")?;
        let (b, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let half = c / 2 * inner;
        if grad.numel() != b * half {
            return Err(Error::shape("mfm grad", b * half, grad.numel()));
        }
        let mut dx = vec![T::zero(); b * c * inner];
        let gd = grad.data();
        for bi in 0..b {
            for i in 0..half {
                let g = gd[bi * half + i];
                let at = bi * c * inner + if first[bi * half + i] { i } else { half + i };
                dx[at] = g;
            }
        }
        Tensor::new(shape, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mfm_takes_channel_half_max() {
        // one example, two channels, two frames: [[1,2],[5,0]]
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 5.0, 0.0]).unwrap();
        let y = Mfm::<f64>::default().infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.data(), &[5.0, 2.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shift() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 10.0, 11.0, 9.0]).unwrap();
        let sm = Softmax::<f64>::default();
        let y = sm.infer(&x).unwrap();
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let shifted = Tensor::new(vec![2, 3], x.data().iter().map(|v| v + 123.0).collect()).unwrap();
        let y2 = sm.infer(&shifted).unwrap();
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut r = Relu::<f64>::default();
        assert!(matches!(r.backward(&Tensor::zeros(vec![1, 1])), Err(Error::State(_))));
    }
}
