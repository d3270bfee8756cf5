use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::module::{Module, Padding};
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Declarative description of one layer; `build` instantiates it with
/// freshly initialised parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
        padding: Padding,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Batchnorm {
        channels: usize,
    },
    Mfm,
    Relu,
    Sigmoid,
    Softmax,
    SeBlock {
        channels: usize,
        bottleneck: usize,
    },
    DilatedTdnnBlock {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    },
    AttentiveStatsPool {
        channels: usize,
        attention_dim: usize,
    },
    MeanPool,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |vals: &[usize]| vals.iter().all(|&v| v > 0);
        let ok = match *self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, dilation, stride, padding } => {
                positive(&[in_channels, out_channels, kernel, dilation, stride])
                    && (padding == Padding::Valid || stride == 1)
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                positive(&[in_channels, out_channels, kernel, stride]) && (padding == Padding::Valid || stride == 1)
            }
            LayerSpec::Dense { in_features, out_features } => positive(&[in_features, out_features]),
            LayerSpec::Batchnorm { channels } => channels > 0,
            LayerSpec::SeBlock { channels, bottleneck } => positive(&[channels, bottleneck]),
            LayerSpec::DilatedTdnnBlock { in_channels, out_channels, kernel, dilation } => {
                positive(&[in_channels, out_channels, kernel, dilation])
            }
            LayerSpec::AttentiveStatsPool { channels, attention_dim } => positive(&[channels, attention_dim]),
            LayerSpec::MaxPool2d { kernel, stride } => positive(&[kernel, stride]),
            LayerSpec::Mfm | LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax | LayerSpec::MeanPool => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid layer hyperparameters: {self:?}")))
        }
    }

    pub fn build<T: Scalar, R: Rng>(&self, rng: &mut R) -> Result<Box<dyn Module<T>>> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, dilation, stride, padding } => Box::new(
                Conv1d::new(in_channels, out_channels, kernel, dilation, stride, padding, rng),
            ),
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                Box::new(Conv2d::new(in_channels, out_channels, (kernel, kernel), stride, padding, rng))
            }
            LayerSpec::Dense { in_features, out_features } => Box::new(Dense::new(in_features, out_features, rng)),
            LayerSpec::Batchnorm { channels } => Box::new(BatchNorm::new(channels)),
            LayerSpec::Mfm => Box::new(Mfm::default()),
            LayerSpec::Relu => Box::new(Relu::default()),
            LayerSpec::Sigmoid => Box::new(Sigmoid::default()),
            LayerSpec::Softmax => Box::new(Softmax::default()),
            LayerSpec::SeBlock { channels, bottleneck } => Box::new(SeBlock::new(channels, bottleneck, rng)),
            LayerSpec::DilatedTdnnBlock { in_channels, out_channels, kernel, dilation } => {
                Box::new(TdnnBlock::new(in_channels, out_channels, kernel, dilation, rng))
            }
            LayerSpec::AttentiveStatsPool { channels, attention_dim } => {
                Box::new(AttentiveStatsPool::new(channels, attention_dim, rng))
            }
            LayerSpec::MeanPool => Box::new(MeanPool::default()),
            LayerSpec::MaxPool2d { kernel, stride } => Box::new(MaxPool2d::new(kernel, stride)),
        })
    }
}
