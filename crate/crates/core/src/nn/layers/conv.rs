use rand::Rng;
use rayon::prelude::*;

use super::{he_uniform, take_cache, tap_range};
use crate::error::{Error, Result};
use crate::nn::module::{join, Mode, Module, Padding, ParamKind, Visitor, VisitorMut};
use crate::nn::tensor::{Scalar, Tensor};

fn padding_amounts(padding: Padding, span: usize) -> (usize, usize) {
    match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (span / 2, span - span / 2),
    }
}

/// 1-D convolution over `[B, C, T]` with dilation and stride.
pub struct Conv1d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: Padding,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel > 0 && dilation > 0 && stride > 0);
        Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            stride,
            padding,
            weight: he_uniform(vec![out_channels, in_channels, kernel], in_channels * kernel, rng),
            bias: Tensor::zeros(vec![out_channels]),
            cache: None,
        }
    }

    fn pads(&self) -> (usize, usize) {
        padding_amounts(self.padding, self.dilation * (self.kernel - 1))
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        let (pl, pr) = self.pads();
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = in_len + pl + pr;
        if padded < span {
            return Err(Error::shape("conv1d input length", format!(">= {span}"), in_len));
        }
        Ok((padded - span) / self.stride + 1)
    }

    fn dims(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        x.expect_rank(3, "conv1d input")?;
        let s = x.shape();
        if s[1] != self.in_channels {
            return Err(Error::shape("conv1d channels", self.in_channels, s[1]));
        }
        Ok((s[0], s[2], self.out_len(s[2])?))
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, l, lo) = self.dims(x)?;
        let (ci, co, k) = (self.in_channels, self.out_channels, self.kernel);
        let (pl, _) = self.pads();
        let w = self.weight.data();
        let bias = self.bias.data();
        let xd = x.data();
        let mut out = vec![T::zero(); b * co * lo];
        out.par_chunks_mut(co * lo).enumerate().for_each(|(bi, ob)| {
            let xb = &xd[bi * ci * l..(bi + 1) * ci * l];
            for o in 0..co {
                let orow = &mut ob[o * lo..(o + 1) * lo];
                orow.fill(bias[o]);
                for i in 0..ci {
                    let xrow = &xb[i * l..(i + 1) * l];
                    for kk in 0..k {
                        let wv = w[(o * ci + i) * k + kk];
                        let off = (kk * self.dilation) as isize - pl as isize;
                        let (t0, t1) = tap_range(off, self.stride, l, lo);
                        if self.stride == 1 {
                            let xs = &xrow[(t0 as isize + off) as usize..(t1 as isize + off) as usize];
                            for (ov, &xv) in orow[t0..t1].iter_mut().zip(xs) {
                                *ov += wv * xv;
                            }
                        } else {
                            for t in t0..t1 {
                                orow[t] += wv * xrow[(t as isize * self.stride as isize + off) as usize];
                            }
                        }
                    }
                }
            }
        });
        Tensor::new(vec![b, co, lo], out)
    }
}

impl<T: Scalar> Module<T> for Conv1d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.compute(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.compute(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, "conv1d")?;
        let (b, l, lo) = self.dims(&x)?;
        let (ci, co, k) = (self.in_channels, self.out_channels, self.kernel);
        if grad.shape() != [b, co, lo] {
            return Err(Error::shape("conv1d grad", [b, co, lo], grad.shape()));
        }
        let (pl, _) = self.pads();
        let (stride, dil) = (self.stride, self.dilation);
        let w = self.weight.data();
        let (xd, gd) = (x.data(), grad.data());
        let per: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let xb = &xd[bi * ci * l..(bi + 1) * ci * l];
                let gb = &gd[bi * co * lo..(bi + 1) * co * lo];
                let mut dx = vec![T::zero(); ci * l];
                let mut dw = vec![T::zero(); co * ci * k];
                let mut db = vec![T::zero(); co];
                for o in 0..co {
                    let grow = &gb[o * lo..(o + 1) * lo];
                    db[o] = grow.iter().copied().sum();
                    for i in 0..ci {
                        let xrow = &xb[i * l..(i + 1) * l];
                        let dxrow = &mut dx[i * l..(i + 1) * l];
                        for kk in 0..k {
                            let widx = (o * ci + i) * k + kk;
                            let wv = w[widx];
                            let off = (kk * dil) as isize - pl as isize;
                            let (t0, t1) = tap_range(off, stride, l, lo);
                            let mut acc = T::zero();
                            if stride == 1 {
                                let base = (t0 as isize + off) as usize;
                                let n = t1 - t0;
                                let xs = &xrow[base..base + n];
                                let dxs = &mut dxrow[base..base + n];
                                for ((gv, &xv), dxv) in grow[t0..t1].iter().zip(xs).zip(dxs) {
                                    acc += *gv * xv;
                                    *dxv += wv * *gv;
                                }
                            } else {
                                for t in t0..t1 {
                                    let xi = (t as isize * stride as isize + off) as usize;
                                    acc += grow[t] * xrow[xi];
                                    dxrow[xi] += wv * grow[t];
                                }
                            }
                            dw[widx] += acc;
                        }
                    }
                }
                (dx, dw, db)
            })
            .collect();
        let mut dx_all = Vec::with_capacity(b * ci * l);
        let mut dw = vec![T::zero(); co * ci * k];
        let mut db = vec![T::zero(); co];
        for (dx, dwb, dbb) in per {
            dx_all.extend(dx);
            dw.iter_mut().zip(&dwb).for_each(|(a, &v)| *a += v);
            db.iter_mut().zip(&dbb).for_each(|(a, &v)| *a += v);
        }
        self.weight.accumulate_grad(&dw);
        self.bias.accumulate_grad(&db);
        Tensor::new(vec![b, ci, l], dx_all)
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

/// 2-D convolution over `[B, C, H, W]` with a square stride.
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    cache: Option<Tensor<T>>,
}

struct Geom {
    b: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    ph: usize,
    pw: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel.0 > 0 && kernel.1 > 0 && stride > 0);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: he_uniform(
                vec![out_channels, in_channels, kernel.0, kernel.1],
                in_channels * kernel.0 * kernel.1,
                rng,
            ),
            bias: Tensor::zeros(vec![out_channels]),
            cache: None,
        }
    }

    fn geom(&self, x: &Tensor<T>) -> Result<Geom> {
        x.expect_rank(4, "conv2d input")?;
        let s = x.shape();
        if s[1] != self.in_channels {
            return Err(Error::shape("conv2d channels", self.in_channels, s[1]));
        }
        let (ph, ph_r) = padding_amounts(self.padding, self.kernel.0 - 1);
        let (pw, pw_r) = padding_amounts(self.padding, self.kernel.1 - 1);
        let (h, w) = (s[2], s[3]);
        if h + ph + ph_r < self.kernel.0 || w + pw + pw_r < self.kernel.1 {
            return Err(Error::shape("conv2d spatial size", self.kernel, (h, w)));
        }
        Ok(Geom {
            b: s[0],
            h,
            w,
            ho: (h + ph + ph_r - self.kernel.0) / self.stride + 1,
            wo: (w + pw + pw_r - self.kernel.1) / self.stride + 1,
            ph,
            pw,
        })
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geom(x)?;
        let (ci, co) = (self.in_channels, self.out_channels);
        let (kh, kw) = self.kernel;
        let s = self.stride;
        let wd = self.weight.data();
        let bias = self.bias.data();
        let xd = x.data();
        let in_sz = ci * g.h * g.w;
        let out_sz = co * g.ho * g.wo;
        let mut out = vec![T::zero(); g.b * out_sz];
        out.par_chunks_mut(out_sz).enumerate().for_each(|(bi, ob)| {
            let xb = &xd[bi * in_sz..(bi + 1) * in_sz];
            for o in 0..co {
                let oplane = &mut ob[o * g.ho * g.wo..(o + 1) * g.ho * g.wo];
                oplane.fill(bias[o]);
                for i in 0..ci {
                    let xplane = &xb[i * g.h * g.w..(i + 1) * g.h * g.w];
                    for dy in 0..kh {
                        let offy = dy as isize - g.ph as isize;
                        let (y0, y1) = tap_range(offy, s, g.h, g.ho);
                        for dx in 0..kw {
                            let wv = wd[((o * ci + i) * kh + dy) * kw + dx];
                            let offx = dx as isize - g.pw as isize;
                            let (x0, x1) = tap_range(offx, s, g.w, g.wo);
                            for oy in y0..y1 {
                                let iy = (oy as isize * s as isize + offy) as usize;
                                let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
                                let orow = &mut oplane[oy * g.wo..(oy + 1) * g.wo];
                                if s == 1 {
                                    let base = (x0 as isize + offx) as usize;
                                    for (ov, &xv) in orow[x0..x1].iter_mut().zip(&xrow[base..base + (x1 - x0)]) {
                                        *ov += wv * xv;
                                    }
                                } else {
                                    for ox in x0..x1 {
                                        orow[ox] += wv * xrow[(ox as isize * s as isize + offx) as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        Tensor::new(vec![g.b, co, g.ho, g.wo], out)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.compute(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.compute(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, "conv2d")?;
        let g = self.geom(&x)?;
        let (ci, co) = (self.in_channels, self.out_channels);
        let (kh, kw) = self.kernel;
        let s = self.stride;
        if grad.shape() != [g.b, co, g.ho, g.wo] {
            return Err(Error::shape("conv2d grad", [g.b, co, g.ho, g.wo], grad.shape()));
        }
        let wd = self.weight.data();
        let (xd, gd) = (x.data(), grad.data());
        let in_sz = ci * g.h * g.w;
        let out_sz = co * g.ho * g.wo;
        let per: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..g.b)
            .into_par_iter()
            .map(|bi| {
                let xb = &xd[bi * in_sz..(bi + 1) * in_sz];
                let gb = &gd[bi * out_sz..(bi + 1) * out_sz];
                let mut dxb = vec![T::zero(); in_sz];
                let mut dw = vec![T::zero(); co * ci * kh * kw];
                let mut db = vec![T::zero(); co];
                for o in 0..co {
                    let gplane = &gb[o * g.ho * g.wo..(o + 1) * g.ho * g.wo];
                    db[o] = gplane.iter().copied().sum();
                    for i in 0..ci {
                        let xplane = &xb[i * g.h * g.w..(i + 1) * g.h * g.w];
                        let dxplane = &mut dxb[i * g.h * g.w..(i + 1) * g.h * g.w];
                        for dy in 0..kh {
                            let offy = dy as isize - g.ph as isize;
                            let (y0, y1) = tap_range(offy, s, g.h, g.ho);
                            for dx in 0..kw {
                                let widx = ((o * ci + i) * kh + dy) * kw + dx;
                                let wv = wd[widx];
                                let offx = dx as isize - g.pw as isize;
                                let (x0, x1) = tap_range(offx, s, g.w, g.wo);
                                let mut acc = T::zero();
                                for oy in y0..y1 {
                                    let iy = (oy as isize * s as isize + offy) as usize;
                                    let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                                    let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
                                    let dxrow = &mut dxplane[iy * g.w..(iy + 1) * g.w];
                                    for ox in x0..x1 {
                                        let ix = (ox as isize * s as isize + offx) as usize;
                                        acc += grow[ox] * xrow[ix];
                                        dxrow[ix] += wv * grow[ox];
                                    }
                                }
                                dw[widx] += acc;
                            }
                        }
                    }
                }
                (dxb, dw, db)
            })
            .collect();
        let mut dx_all = Vec::with_capacity(g.b * in_sz);
        let mut dw = vec![T::zero(); co * ci * kh * kw];
        let mut db = vec![T::zero(); co];
        for (dxb, dwb, dbb) in per {
            dx_all.extend(dxb);
            dw.iter_mut().zip(&dwb).for_each(|(a, &v)| *a += v);
            db.iter_mut().zip(&dbb).for_each(|(a, &v)| *a += v);
        }
        self.weight.accumulate_grad(&dw);
        self.bias.accumulate_grad(&db);
        Tensor::new(x.shape().to_vec(), dx_all)
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dilated_valid_output_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::<f64>::new(1, 1, 3, 2, 1, Padding::Valid, &mut rng);
        assert_eq!(conv.out_len(10).unwrap(), 6);
        let y = conv.infer(&Tensor::zeros(vec![2, 1, 10])).unwrap();
        assert_eq!(y.shape(), &[2, 1, 6]);
    }

    #[test]
    fn same_padding_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::<f64>::new(2, 3, 3, 3, 1, Padding::Same, &mut rng);
        let y = conv.infer(&Tensor::zeros(vec![1, 2, 17])).unwrap();
        assert_eq!(y.shape(), &[1, 3, 17]);
        let conv = Conv2d::<f64>::new(1, 2, (3, 3), 1, Padding::Same, &mut rng);
        let y = conv.infer(&Tensor::zeros(vec![1, 1, 5, 7])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 5, 7]);
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::<f64>::new(2, 1, 2, 1, 2, Padding::Valid, &mut rng);
        let x = Tensor::new(vec![1, 2, 5], vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]).unwrap();
        let y = conv.infer(&x).unwrap();
        let w = conv.weight.data();
        // out[t] = sum_i sum_k w[i,k] x[i, 2t + k]
        for t in 0..2 {
            let mut e = 0.0;
            for i in 0..2 {
                for k in 0..2 {
                    e += w[i * 2 + k] * x.data()[i * 5 + 2 * t + k];
                }
            }
            assert!((y.data()[t] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_channels_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::<f64>::new(4, 1, 3, 1, 1, Padding::Valid, &mut rng);
        assert!(matches!(conv.infer(&Tensor::zeros(vec![1, 3, 10])), Err(Error::Shape { .. })));
    }
}
