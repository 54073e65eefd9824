use alloc::vec::Vec;

use rand::Rng;

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::layer::{Activation, Affine, Layer, LayerKind};
use crate::tensor::{Scalar, Tensor};

/// Gradients from a full backward pass.
#[derive(Clone, Debug)]
pub struct Backward<T> {
    /// One entry per tensor of [`Network::params`], same order and shapes.
    pub param_grads: Vec<Tensor<T>>,
    pub input_grad: Tensor<T>,
}

/// An ordered stack of layers operating on `(batch, features)` matrices.
///
/// A frozen network still runs forward and propagates input gradients, but
/// refuses parameter updates.
#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    layers: Vec<Layer<T>>,
    input_dim: usize,
    frozen: bool,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_dim: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            dim = layer.output_dim(dim).ok_or_else(|| {
                Error::shape(alloc::format!(
                    "layer {i} ({}) does not accept width {dim}",
                    layer.kind().name()
                ))
            })?;
        }
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        Ok(Self {
            layers,
            input_dim,
            frozen: false,
        })
    }

    /// Fully connected stack over `dims`, with `hidden` after every inner
    /// affine layer and `output` after the last one.
    pub fn mlp(dims: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(alloc::format!(
                "need at least two positive widths, got {dims:?}"
            )));
        }
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            layers.push(Layer::Affine(Affine::glorot(pair[0], pair[1], rng)));
            let act = if i + 2 == dims.len() { output } else { hidden };
            layers.extend(act.layer());
        }
        Self::new(dims[0], layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().fold(self.input_dim, |d, l| l.output_dim(d).unwrap())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen_copy(&self) -> Self {
        let mut copy = self.clone();
        copy.clear_cache();
        copy.frozen = true;
        copy
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// Overwrites every parameter; used when restoring checkpoints.
    pub fn set_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::shape(alloc::format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, value) in slots.iter().zip(&values) {
            if slot.shape() != value.shape() {
                return Err(Error::shape(alloc::format!(
                    "parameter shape {:?} does not match {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
        }
        for (slot, value) in slots.iter_mut().zip(values) {
            **slot = value;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::shape(alloc::format!(
                "network expects (batch, {}), got {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass that caches activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h);
        }
        h.ensure_finite("network forward")?;
        Ok(h)
    }

    /// Forward pass that leaves the cache alone.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.predict(&h);
        }
        h.ensure_finite("network forward")?;
        Ok(h)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Backward<T>> {
        let mut g = upstream.clone();
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter_mut().rev() {
            let (next, grads) = layer.backward(&g, true)?;
            per_layer.push(grads);
            g = next;
        }
        let param_grads = per_layer.into_iter().rev().flatten().collect();
        Ok(Backward {
            param_grads,
            input_grad: g,
        })
    }

    /// Backward pass computing only the gradient with respect to the input.
    pub fn backward_input(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g, false)?.0;
        }
        Ok(g)
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Applies one optimizer step using gradients in [`Network::params`] order.
    pub fn apply_adam(&mut self, adam: &mut Adam<T>, grads: &[Tensor<T>]) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        let mut params = self.params_mut();
        adam.step(&mut params, grads)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            input_dim: self.input_dim,
            frozen: self.frozen,
        }
    }

    /// FNV-1a over layer kinds, shapes and parameter bit patterns.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01B3;
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(&(self.input_dim as u64).to_le_bytes());
        for layer in &self.layers {
            eat(layer.kind().name().as_bytes());
            for p in layer.params() {
                for &d in p.shape() {
                    eat(&(d as u64).to_le_bytes());
                }
                for v in p.data() {
                    eat(&v.to_f64_lossless().to_bits().to_le_bytes());
                }
            }
        }
        h
    }
}

/// Concatenates the layers of `first` and `second` into one network.
pub fn chain<T: Scalar>(first: &Network<T>, second: &Network<T>) -> Result<Network<T>> {
    let mut layers = first.layers.clone();
    layers.extend(second.layers.iter().cloned());
    let mut net = Network::new(first.input_dim, layers)?;
    net.clear_cache();
    Ok(net)
}
