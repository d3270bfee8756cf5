use rand::Rng;

use super::module::{Mode, Module, ParamKind};
use super::spec::LayerSpec;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

struct Layer<T> {
    name: String,
    spec: LayerSpec,
    module: Box<dyn Module<T>>,
}

/// A feed-forward chain of named layers.
///
/// Parameter names are `<layer>.<tensor>`, in layer order.
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    /// Layers covered by the last recorded forward pass.
    recorded: Option<usize>,
}

impl<T: Scalar> Network<T> {
    pub fn build<R: Rng>(specs: &[(String, LayerSpec)], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (name, spec) in specs {
            if name.is_empty() || name.contains('.') {
                return Err(Error::InvalidArgument(format!("invalid layer name {name:?}")));
            }
            if layers.iter().any(|l: &Layer<T>| &l.name == name) {
                return Err(Error::InvalidArgument(format!("duplicate layer name {name:?}")));
            }
            layers.push(Layer {
                name: name.clone(),
                spec: spec.clone(),
                module: spec.build(rng)?,
            });
        }
        Ok(Self { layers, recorded: None })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn specs(&self) -> Vec<(String, LayerSpec)> {
        self.layers.iter().map(|l| (l.name.clone(), l.spec.clone())).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer named {name:?}")))
    }

    /// Recorded forward through every layer.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_to(x, mode, self.layers.len())
    }

    /// Recorded forward through the first `n` layers; `backward` then starts at layer `n - 1`.
    pub fn forward_to(&mut self, x: &Tensor<T>, mode: Mode, n: usize) -> Result<Tensor<T>> {
        if n > self.layers.len() {
            return Err(Error::InvalidArgument(format!("{n} layers requested, network has {}", self.layers.len())));
        }
        self.recorded = None;
        let mut h = x.clone();
        for layer in &mut self.layers[..n] {
            h = layer.module.forward(&h, mode)?;
        }
        self.recorded = Some(n);
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_n(x, self.layers.len())
    }

    /// Inference up to and including the named layer.
    pub fn infer_until(&self, x: &Tensor<T>, name: &str) -> Result<Tensor<T>> {
        self.infer_n(x, self.index_of(name)? + 1)
    }

    fn infer_n(&self, x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers[..n] {
            h = layer.module.infer(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates through the recorded layers, accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self
            .recorded
            .take()
            .ok_or_else(|| Error::State("network backward called before forward".into()))?;
        let mut g = grad.clone();
        for layer in self.layers[..n].iter_mut().rev() {
            g = layer.module.backward(&g)?;
        }
        Ok(g)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        for layer in &self.layers {
            layer.module.visit(&layer.name, f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        for layer in &mut self.layers {
            layer.module.visit_mut(&layer.name, f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, t, _| t.zero_grad());
    }

    pub fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t, kind| {
            if kind == ParamKind::Trainable {
                n += t.numel();
            }
        });
        n
    }

    /// Copies of every parameter and buffer, in visit order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.visit(&mut |_, t, _| out.push(t.data().to_vec()));
        out
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) -> Result<()> {
        let mut i = 0;
        let mut bad = None;
        self.visit_mut(&mut |name, t, _| {
            match snapshot.get(i) {
                Some(v) if v.len() == t.numel() => t.data_mut().copy_from_slice(v),
                _ => {
                    bad.get_or_insert_with(|| name.to_string());
                }
            }
            i += 1;
        });
        match bad {
            None if i == snapshot.len() => Ok(()),
            None => Err(Error::State(format!("snapshot has {} tensors, network {i}", snapshot.len()))),
            Some(name) => Err(Error::State(format!("snapshot does not match tensor {name}"))),
        }
    }
}
