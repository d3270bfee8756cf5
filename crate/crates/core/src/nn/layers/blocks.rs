use rand::Rng;

use super::activation::sigmoid;
use super::{take_cache, BatchNorm, Conv1d, Dense, Relu};
use crate::error::{Error, Result};
use crate::nn::module::{join, Mode, Module, Padding, Visitor, VisitorMut};
use crate::nn::tensor::{Scalar, Tensor};

/// Squeeze-and-excitation over `[B, C, T]`: channels rescaled by
/// `sigmoid(fc2(relu(fc1(mean_t x))))`.
pub struct SeBlock<T> {
    pub channels: usize,
    pub bottleneck: usize,
    fc1: Dense<T>,
    fc2: Dense<T>,
    cache: Option<SeCache<T>>,
}

struct SeCache<T> {
    x: Tensor<T>,
    relu_mask: Vec<bool>,
    gate: Vec<T>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(channels: usize, bottleneck: usize, rng: &mut impl Rng) -> Self {
        Self {
            channels,
            bottleneck,
            fc1: Dense::new(channels, bottleneck, rng),
            fc2: Dense::new(bottleneck, channels, rng),
            cache: None,
        }
    }

    fn squeeze(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(3, "se_block input")?;
        let s = x.shape();
        if s[1] != self.channels || s[2] == 0 {
            return Err(Error::shape("se_block input", format!("[B, {}, T>0]", self.channels), s));
        }
        let inv = T::of(1.0 / s[2] as f64);
        let pooled = x.data().chunks(s[2]).map(|r| r.iter().copied().sum::<T>() * inv).collect();
        Tensor::new(vec![s[0], s[1]], pooled)
    }

    fn excite(x: &Tensor<T>, gate: &[T]) -> Result<Tensor<T>> {
        let t = x.shape()[2];
        let mut y = x.data().to_vec();
        for (row, &g) in y.chunks_mut(t).zip(gate) {
            row.iter_mut().for_each(|v| *v = *v * g);
        }
        Tensor::new(x.shape().to_vec(), y)
    }
}

impl<T: Scalar> Module<T> for SeBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = self.squeeze(x)?;
        let z1 = self.fc1.forward(&s, mode)?;
        let relu_mask: Vec<bool> = z1.data().iter().map(|&v| v > T::zero()).collect();
        let h = Tensor::new(z1.shape().to_vec(), z1.data().iter().map(|&v| v.max(T::zero())).collect())?;
        let z2 = self.fc2.forward(&h, mode)?;
        let gate: Vec<T> = z2.data().iter().map(|&v| sigmoid(v)).collect();
        let y = Self::excite(x, &gate)?;
        self.cache = Some(SeCache {
            x: x.clone(),
            relu_mask,
            gate,
        });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.squeeze(x)?;
        let z1 = self.fc1.infer(&s)?;
        let h = Tensor::new(z1.shape().to_vec(), z1.data().iter().map(|&v| v.max(T::zero())).collect())?;
        let z2 = self.fc2.infer(&h)?;
        let gate: Vec<T> = z2.data().iter().map(|&v| sigmoid(v)).collect();
        Self::excite(x, &gate)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let SeCache { x, relu_mask, gate } = take_cache(&mut self.cache, "se_block")?;
        if grad.shape() != x.shape() {
            return Err(Error::shape("se_block grad", x.shape(), grad.shape()));
        }
        let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (xd, gd) = (x.data(), grad.data());
        let mut dx = vec![T::zero(); xd.len()];
        let mut dgate = vec![T::zero(); b * c];
        for r in 0..b * c {
            let (xr, gr) = (&xd[r * t..(r + 1) * t], &gd[r * t..(r + 1) * t]);
            dgate[r] = xr.iter().zip(gr).map(|(&a, &g)| a * g).sum();
            for (d, &g) in dx[r * t..(r + 1) * t].iter_mut().zip(gr) {
                *d = g * gate[r];
            }
        }
        let dz2: Vec<T> = dgate
            .iter()
            .zip(&gate)
            .map(|(&d, &s)| d * s * (T::one() - s))
            .collect();
        let dh = self.fc2.backward(&Tensor::new(vec![b, c], dz2)?)?;
        let dz1: Vec<T> = dh
            .data()
            .iter()
            .zip(&relu_mask)
            .map(|(&d, &m)| if m { d } else { T::zero() })
            .collect();
        let ds = self.fc1.backward(&Tensor::new(vec![b, self.bottleneck], dz1)?)?;
        let inv = T::of(1.0 / t as f64);
        for (r, &d) in ds.data().iter().enumerate() {
            for v in &mut dx[r * t..(r + 1) * t] {
                *v += d * inv;
            }
        }
        Tensor::new(x.shape().to_vec(), dx)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Dilated TDNN block: same-padded dilated conv, ReLU, batch norm, plus an
/// identity shortcut when input and output widths agree.
pub struct TdnnBlock<T> {
    pub conv: Conv1d<T>,
    relu: Relu<T>,
    pub norm: BatchNorm<T>,
    pub residual: bool,
}

impl<T: Scalar> TdnnBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv1d::new(in_channels, out_channels, kernel, dilation, 1, Padding::Same, rng),
            relu: Relu::default(),
            norm: BatchNorm::new(out_channels),
            residual: in_channels == out_channels,
        }
    }
}

fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    )
}

impl<T: Scalar> Module<T> for TdnnBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.conv.forward(x, mode)?;
        let h = self.relu.forward(&h, mode)?;
        let h = self.norm.forward(&h, mode)?;
        if self.residual {
            add(&h, x)
        } else {
            Ok(h)
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm.infer(&self.relu.infer(&self.conv.infer(x)?)?)?;
        if self.residual {
            add(&h, x)
        } else {
            Ok(h)
        }
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.norm.backward(grad)?;
        let g = self.relu.backward(&g)?;
        let dx = self.conv.backward(&g)?;
        if self.residual {
            add(&dx, grad)
        } else {
            Ok(dx)
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}
