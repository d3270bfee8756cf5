use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, activations cached for backward.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    /// Zero padding that keeps the length (stride 1).
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Persistent state that is saved but not optimised (running statistics).
    Buffer,
}

pub type Visitor<'a, T> = dyn FnMut(&str, &Tensor<T>, ParamKind) + 'a;
pub type VisitorMut<'a, T> = dyn FnMut(&str, &mut Tensor<T>, ParamKind) + 'a;

/// One differentiable layer.
///
/// `forward` caches whatever `backward` needs; `infer` is the cache-free
/// evaluation path and may be called concurrently.
pub trait Module<T: Scalar>: Send + Sync {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>>;
    fn visit(&self, _prefix: &str, _f: &mut Visitor<'_, T>) {}
    fn visit_mut(&mut self, _prefix: &str, _f: &mut VisitorMut<'_, T>) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
