//! Attentive statistics pooling.
//!
//! For each channel `c` a softmax over time of `W2 tanh(W1 x_t + b1) + b2`
//! gives weights `a[c, t]`; the output concatenates the weighted mean and the
//! weighted standard deviation of every channel. The second projection has
//! no bias: a per-channel constant cancels in the softmax over time.

use rand::Rng;
use rayon::prelude::*;

use super::activation::softmax_rows;
use super::{he_uniform, take_cache};
use crate::error::{Error, Result};
use crate::nn::module::{join, Mode, Module, ParamKind, Visitor, VisitorMut};
use crate::nn::tensor::{Scalar, Tensor};

const VAR_FLOOR: f64 = 1e-8;

pub struct AttentiveStatsPool<T> {
    pub channels: usize,
    pub attention_dim: usize,
    /// `[A, C]`
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    /// `[C, A]`
    pub w2: Tensor<T>,
    cache: Option<Cache<T>>,
}

struct Cache<T> {
    x: Tensor<T>,
    per: Vec<Example<T>>,
}

/// Per-example intermediates.
struct Example<T> {
    h: Vec<T>,     // [A, T]
    alpha: Vec<T>, // [C, T]
    mu: Vec<T>,
    sigma: Vec<T>,
    var: Vec<T>,
}

impl<T: Scalar> AttentiveStatsPool<T> {
    pub fn new(channels: usize, attention_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            channels,
            attention_dim,
            w1: he_uniform(vec![attention_dim, channels], channels, rng),
            b1: Tensor::zeros(vec![attention_dim]),
            w2: he_uniform(vec![channels, attention_dim], attention_dim, rng),
            cache: None,
        }
    }

    fn dims(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        x.expect_rank(3, "attentive_stats_pool input")?;
        let s = x.shape();
        if s[1] != self.channels || s[2] == 0 {
            return Err(Error::shape("attentive_stats_pool input", format!("[B, {}, T>0]", self.channels), s));
        }
        Ok((s[0], s[2]))
    }

    fn example(&self, xb: &[T], t: usize) -> Example<T> {
        let (c, a) = (self.channels, self.attention_dim);
        let (w1, b1, w2) = (self.w1.data(), self.b1.data(), self.w2.data());
        let mut h = vec![T::zero(); a * t];
        for j in 0..a {
            let row = &mut h[j * t..(j + 1) * t];
            row.fill(b1[j]);
            for ci in 0..c {
                let w = w1[j * c + ci];
                for (hv, &xv) in row.iter_mut().zip(&xb[ci * t..(ci + 1) * t]) {
                    *hv += w * xv;
                }
            }
            row.iter_mut().for_each(|v| *v = v.tanh());
        }
        let mut e = vec![T::zero(); c * t];
        for ci in 0..c {
            let row = &mut e[ci * t..(ci + 1) * t];
            row.fill(T::zero());
            for j in 0..a {
                let w = w2[ci * a + j];
                for (ev, &hv) in row.iter_mut().zip(&h[j * t..(j + 1) * t]) {
                    *ev += w * hv;
                }
            }
        }
        let alpha = softmax_rows(&e, t);
        let mut mu = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut sigma = vec![T::zero(); c];
        for ci in 0..c {
            let (xr, ar) = (&xb[ci * t..(ci + 1) * t], &alpha[ci * t..(ci + 1) * t]);
            let m: T = xr.iter().zip(ar).map(|(&x, &w)| w * x).sum();
            let m2: T = xr.iter().zip(ar).map(|(&x, &w)| w * x * x).sum();
            let v = m2 - m * m;
            mu[ci] = m;
            var[ci] = v;
            sigma[ci] = v.max(T::of(VAR_FLOOR)).sqrt();
        }
        Example { h, alpha, mu, sigma, var }
    }

    fn run(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Example<T>>)> {
        let (b, t) = self.dims(x)?;
        let c = self.channels;
        let xd = x.data();
        let per: Vec<Example<T>> = (0..b)
            .into_par_iter()
            .map(|bi| self.example(&xd[bi * c * t..(bi + 1) * c * t], t))
            .collect();
        let mut out = Vec::with_capacity(b * 2 * c);
        for ex in &per {
            out.extend_from_slice(&ex.mu);
            out.extend_from_slice(&ex.sigma);
        }
        Ok((Tensor::new(vec![b, 2 * c], out)?, per))
    }
}

impl<T: Scalar> Module<T> for AttentiveStatsPool<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (y, per) = self.run(x)?;
        self.cache = Some(Cache { x: x.clone(), per });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x)?.0)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let Cache { x, per } = take_cache(&mut self.cache, "attentive_stats_pool")?;
        let (b, t) = self.dims(&x)?;
        let (c, a) = (self.channels, self.attention_dim);
        if grad.shape() != [b, 2 * c] {
            return Err(Error::shape("attentive_stats_pool grad", [b, 2 * c], grad.shape()));
        }
        let (w1, w2) = (self.w1.data(), self.w2.data());
        let (xd, gd) = (x.data(), grad.data());
        let two = T::of(2.0);
        let results: Vec<[Vec<T>; 4]> = per
            .par_iter()
            .enumerate()
            .map(|(bi, ex)| {
                let xb = &xd[bi * c * t..(bi + 1) * c * t];
                let g = &gd[bi * 2 * c..(bi + 1) * 2 * c];
                let mut dx = vec![T::zero(); c * t];
                let mut de = vec![T::zero(); c * t];
                for ci in 0..c {
                    let (gmu, gsig) = (g[ci], g[c + ci]);
                    let gvar = if ex.var[ci] > T::of(VAR_FLOOR) {
                        gsig / (two * ex.sigma[ci])
                    } else {
                        T::zero()
                    };
                    let gm = gmu - two * ex.mu[ci] * gvar;
                    let xr = &xb[ci * t..(ci + 1) * t];
                    let ar = &ex.alpha[ci * t..(ci + 1) * t];
                    let dxr = &mut dx[ci * t..(ci + 1) * t];
                    let der = &mut de[ci * t..(ci + 1) * t];
                    let mut dot = T::zero();
                    for k in 0..t {
                        let dalpha = gm * xr[k] + gvar * xr[k] * xr[k];
                        der[k] = dalpha;
                        dot += ar[k] * dalpha;
                        dxr[k] = ar[k] * (gm + two * gvar * xr[k]);
                    }
                    for k in 0..t {
                        der[k] = ar[k] * (der[k] - dot);
                    }
                }
                // e = W2 h
                let mut dw2 = vec![T::zero(); c * a];
                let mut dh = vec![T::zero(); a * t];
                for ci in 0..c {
                    let der = &de[ci * t..(ci + 1) * t];
                    for j in 0..a {
                        let hr = &ex.h[j * t..(j + 1) * t];
                        dw2[ci * a + j] = der.iter().zip(hr).map(|(&d, &h)| d * h).sum();
                        let w = w2[ci * a + j];
                        for (dhv, &d) in dh[j * t..(j + 1) * t].iter_mut().zip(der) {
                            *dhv += w * d;
                        }
                    }
                }
                // h = tanh(W1 x + b1)
                let mut dw1 = vec![T::zero(); a * c];
                let mut db1 = vec![T::zero(); a];
                for j in 0..a {
                    let hr = &ex.h[j * t..(j + 1) * t];
                    let dz: Vec<T> = dh[j * t..(j + 1) * t]
                        .iter()
                        .zip(hr)
                        .map(|(&d, &h)| d * (T::one() - h * h))
                        .collect();
                    db1[j] = dz.iter().copied().sum();
                    for ci in 0..c {
                        let xr = &xb[ci * t..(ci + 1) * t];
                        dw1[j * c + ci] = dz.iter().zip(xr).map(|(&d, &x)| d * x).sum();
                        let w = w1[j * c + ci];
                        for (dxv, &d) in dx[ci * t..(ci + 1) * t].iter_mut().zip(&dz) {
                            *dxv += w * d;
                        }
                    }
                }
                [dx, dw1, db1, dw2]
            })
            .collect();
        let mut dx_all = Vec::with_capacity(b * c * t);
        let mut acc = [vec![T::zero(); a * c], vec![T::zero(); a], vec![T::zero(); c * a]];
        for [dx, dw1, db1, dw2] in results {
            dx_all.extend(dx);
            for (dst, src) in acc.iter_mut().zip([dw1, db1, dw2]) {
                dst.iter_mut().zip(&src).for_each(|(d, &s)| *d += s);
            }
        }
        self.w1.accumulate_grad(&acc[0]);
        self.b1.accumulate_grad(&acc[1]);
        self.w2.accumulate_grad(&acc[2]);
        Tensor::new(vec![b, c, t], dx_all)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "w1"), &self.w1, ParamKind::Trainable);
        f(&join(prefix, "b1"), &self.b1, ParamKind::Trainable);
        f(&join(prefix, "w2"), &self.w2, ParamKind::Trainable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        f(&join(prefix, "w1"), &mut self.w1, ParamKind::Trainable);
        f(&join(prefix, "b1"), &mut self.b1, ParamKind::Trainable);
        f(&join(prefix, "w2"), &mut self.w2, ParamKind::Trainable);
    }
}
