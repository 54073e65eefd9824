use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Scalar, Tensor};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Affine,
    Relu,
    Sigmoid,
    Tanh,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Affine => "affine",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "affine" => LayerKind::Affine,
            "relu" => LayerKind::Relu,
            "sigmoid" => LayerKind::Sigmoid,
            "tanh" => LayerKind::Tanh,
            _ => return None,
        })
    }
}

/// Nonlinearity placed after an affine layer when building networks from a
/// dimension list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub(crate) fn layer<T: Scalar>(self) -> Option<Layer<T>> {
        match self {
            Activation::Identity => None,
            Activation::Relu => Some(Layer::relu()),
            Activation::Sigmoid => Some(Layer::sigmoid()),
            Activation::Tanh => Some(Layer::tanh()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Affine<T> {
    /// `(out_dim, in_dim)`
    pub weight: Tensor<T>,
    /// `(out_dim)`
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Affine<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(alloc::format!(
                "affine weight {:?} and bias {:?} are incompatible",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight,
            bias,
            input: None,
        })
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| T::of(rng.random_range(-limit..limit)))
            .collect();
        Self {
            weight: Tensor::new(vec![out_dim, in_dim], data).unwrap(),
            bias: Tensor::zeros(&[out_dim]),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.rows();
        let mut out = matmul_nt(x.data(), n, self.in_dim(), self.weight.data(), self.out_dim());
        for row in out.chunks_exact_mut(self.out_dim()) {
            for (o, &b) in row.iter_mut().zip(self.bias.data()) {
                *o = *o + b;
            }
        }
        Tensor::matrix(n, self.out_dim(), out).unwrap()
    }

    fn input_grad(&self, upstream: &Tensor<T>) -> Tensor<T> {
        let n = upstream.rows();
        let data = matmul_nn(upstream.data(), n, self.out_dim(), self.weight.data(), self.in_dim());
        Tensor::matrix(n, self.in_dim(), data).unwrap()
    }
}

/// One differentiable stage of a [`Network`](crate::Network). Each variant
/// caches what its backward pass needs during `forward`.
#[derive(Clone, Debug)]
pub enum Layer<T = f32> {
    Affine(Affine<T>),
    Relu { input: Option<Tensor<T>> },
    Sigmoid { output: Option<Tensor<T>> },
    Tanh { output: Option<Tensor<T>> },
}

impl<T: Scalar> Layer<T> {
    pub fn affine(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        Affine::new(weight, bias).map(Layer::Affine)
    }

    pub fn relu() -> Self {
        Layer::Relu { input: None }
    }

    pub fn sigmoid() -> Self {
        Layer::Sigmoid { output: None }
    }

    pub fn tanh() -> Self {
        Layer::Tanh { output: None }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Affine(_) => LayerKind::Affine,
            Layer::Relu { .. } => LayerKind::Relu,
            Layer::Sigmoid { .. } => LayerKind::Sigmoid,
            Layer::Tanh { .. } => LayerKind::Tanh,
        }
    }

    /// Output width for an input of width `in_dim`; `None` if incompatible.
    pub fn output_dim(&self, in_dim: usize) -> Option<usize> {
        match self {
            Layer::Affine(a) => (a.in_dim() == in_dim).then(|| a.out_dim()),
            _ => Some(in_dim),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Affine(a) => vec![&a.weight, &a.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Affine(a) => vec![&mut a.weight, &mut a.bias],
            _ => Vec::new(),
        }
    }

    /// Forward pass without touching the cache.
    pub fn predict(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Affine(a) => a.apply(x),
            Layer::Relu { .. } => x.map(|v| v.max(T::zero())),
            Layer::Sigmoid { .. } => x.map(sigmoid),
            Layer::Tanh { .. } => x.map(|v| v.tanh()),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = self.predict(x);
        match self {
            Layer::Affine(a) => a.input = Some(x.clone()),
            Layer::Relu { input } => *input = Some(x.clone()),
            Layer::Sigmoid { output } | Layer::Tanh { output } => *output = Some(out.clone()),
        }
        out
    }

    /// Consumes the forward cache. Returns the input gradient and, when
    /// `with_params` is set, the parameter gradients in [`Layer::params`] order.
    pub fn backward(&mut self, upstream: &Tensor<T>, with_params: bool) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let expect_same = |cached: &Tensor<T>| {
            if cached.shape() == upstream.shape() {
                Ok(())
            } else {
                Err(Error::shape(alloc::format!(
                    "upstream gradient {:?} does not match activation {:?}",
                    upstream.shape(),
                    cached.shape()
                )))
            }
        };
        match self {
            Layer::Affine(a) => {
                let x = a.input.take().ok_or(Error::NoForwardCache)?;
                if upstream.shape() != [x.rows(), a.out_dim()] {
                    return Err(Error::shape(alloc::format!(
                        "upstream gradient {:?} does not match affine output ({}, {})",
                        upstream.shape(),
                        x.rows(),
                        a.out_dim()
                    )));
                }
                let grad_in = a.input_grad(upstream);
                let mut grads = Vec::new();
                if with_params {
                    let n = x.rows();
                    let gw = matmul_tn(upstream.data(), n, a.out_dim(), x.data(), a.in_dim());
                    let mut gb = vec![T::zero(); a.out_dim()];
                    for row in upstream.iter_rows() {
                        for (b, &g) in gb.iter_mut().zip(row) {
                            *b = *b + g;
                        }
                    }
                    grads.push(Tensor::matrix(a.out_dim(), a.in_dim(), gw)?);
                    grads.push(Tensor::new(vec![a.out_dim()], gb)?);
                }
                Ok((grad_in, grads))
            }
            Layer::Relu { input } => {
                let x = input.take().ok_or(Error::NoForwardCache)?;
                expect_same(&x)?;
                let mut g = upstream.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if xv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                Ok((g, Vec::new()))
            }
            Layer::Sigmoid { output } => {
                let y = output.take().ok_or(Error::NoForwardCache)?;
                expect_same(&y)?;
                let mut g = upstream.clone();
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * yv * (T::one() - yv);
                }
                Ok((g, Vec::new()))
            }
            Layer::Tanh { output } => {
                let y = output.take().ok_or(Error::NoForwardCache)?;
                expect_same(&y)?;
                let mut g = upstream.clone();
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * (T::one() - yv * yv);
                }
                Ok((g, Vec::new()))
            }
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Affine(a) => a.input = None,
            Layer::Relu { input } => *input = None,
            Layer::Sigmoid { output } | Layer::Tanh { output } => *output = None,
        }
    }

    pub(crate) fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Affine(a) => Layer::Affine(Affine {
                weight: a.weight.cast(),
                bias: a.bias.cast(),
                input: None,
            }),
            Layer::Relu { .. } => Layer::relu(),
            Layer::Sigmoid { .. } => Layer::sigmoid(),
            Layer::Tanh { .. } => Layer::tanh(),
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    // Split by sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
