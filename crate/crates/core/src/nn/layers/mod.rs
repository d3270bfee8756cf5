mod activation;
mod attention;
mod blocks;
mod conv;
mod dense;
mod norm;
mod pooling;

pub use activation::{Mfm, Relu, Sigmoid, Softmax};
pub use attention::AttentiveStatsPool;
pub use blocks::{SeBlock, TdnnBlock};
pub use conv::{Conv1d, Conv2d};
pub use dense::Dense;
pub use norm::BatchNorm;
pub use pooling::{MaxPool2d, MeanPool};

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// He-uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub(crate) fn he_uniform<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, data).expect("shape matches")
}

pub(crate) fn take_cache<C>(cache: &mut Option<C>, layer: &str) -> Result<C> {
    cache
        .take()
        .ok_or_else(|| Error::State(format!("{layer}: backward called before forward")))
}

/// Valid output index range `[t0, t1)` for a tap at input offset `off`.
pub(crate) fn tap_range(off: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let t0 = if off < 0 { ((-off) + s - 1) / s } else { 0 };
    let t1 = if (in_len as isize) > off {
        ((in_len as isize - off) + s - 1) / s
    } else {
        0
    };
    let t1 = (t1 as usize).min(out_len);
    let t0 = (t0 as usize).min(t1);
    (t0, t1)
}
