//! Minimal tensor/NN kernel set with exact analytic gradients: 2-D
//! convolution, transposed convolution, ReLU, mean-squared-error loss and
//! Adam, plus a central-finite-difference checker. No external ML framework.
//!
//! Parameters and activations live at the instantiating scalar type;
//! every reduction accumulates at 64 bits.

mod adam;
mod check;
mod io;
mod layers;
mod tensor;

pub use adam::{adam_update, AdamHyper, AdamState, ModelOptimizer};
pub use check::finite_difference_check;
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{
    conv2d, conv2d_grad, conv_output_dim, conv_transpose2d, conv_transpose2d_grad,
    conv_transpose_output_dim, mse_loss, relu, relu_grad, LayerGrads, LayerParams,
};
pub use tensor::Tensor4;

use crate::error::Result;
use crate::scalar::Scalar;

/// Layer discriminator, also the on-disk kind tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv = 0,
    ConvTranspose = 1,
}

/// One layer of the network: a (transposed) convolution with an optional
/// ReLU on its output.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar> {
    pub kind: LayerKind,
    pub params: LayerParams<T>,
    pub relu: bool,
}

impl<T: Scalar> Layer<T> {
    fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.kind {
            LayerKind::Conv => conv2d(x, &self.params),
            LayerKind::ConvTranspose => conv_transpose2d(x, &self.params),
        }
    }

    fn backward(&self, x: &Tensor4<T>, upstream: &Tensor4<T>) -> Result<(Tensor4<T>, LayerGrads<T>)> {
        match self.kind {
            LayerKind::Conv => conv2d_grad(x, &self.params, upstream),
            LayerKind::ConvTranspose => conv_transpose2d_grad(x, &self.params, upstream),
        }
    }

    /// Output channel count (the bias dimension).
    pub fn out_channels(&self) -> usize {
        self.params.biases.len()
    }
}

/// A feed-forward stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer activations recorded during a forward pass, as needed by the
/// backward pass.
pub struct ForwardCache<T: Scalar> {
    /// Input of each layer.
    inputs: Vec<Tensor4<T>>,
    /// Pre-activation output of each layer.
    preacts: Vec<Tensor4<T>>,
    /// Final (post-activation) output.
    pub output: Tensor4<T>,
}

/// Gradients for every layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T: Scalar> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    kernels: Tensor4::zeros(*l.params.kernels.shape()),
                    biases: vec![T::zero(); l.params.biases.len()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.kernels.add_assign(&b.kernels);
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.kernels.scale(factor);
            for b in &mut l.biases {
                *b = *b * factor;
            }
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
            if layer.relu {
                cur = relu(&cur);
            }
        }
        Ok(cur)
    }

    /// Forward pass that records everything the backward pass needs.
    pub fn forward_cached(&self, x: &Tensor4<T>) -> Result<ForwardCache<T>> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            inputs.push(cur.clone());
            let pre = layer.forward(&cur)?;
            preacts.push(pre.clone());
            cur = if layer.relu { relu(&pre) } else { pre };
        }
        Ok(ForwardCache {
            inputs,
            preacts,
            output: cur,
        })
    }

    /// Backpropagates `upstream` (gradient at the output) through the stack.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &Tensor4<T>) -> Result<ModelGrads<T>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut up = upstream.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                up = relu_grad(&cache.preacts[idx], &up)?;
            }
            let (gx, gp) = layer.backward(&cache.inputs[idx], &up)?;
            grads.push(gp);
            up = gx;
        }
        grads.reverse();
        Ok(ModelGrads { layers: grads })
    }

    /// Applies an update to every parameter block, layer by layer.
    pub fn apply<F: FnMut(&mut [T], usize)>(&mut self, mut f: F) {
        let mut block = 0usize;
        for layer in &mut self.layers {
            f(layer.params.kernels.data_mut(), block);
            block += 1;
            f(&mut layer.params.biases, block);
            block += 1;
        }
    }

    /// Parameter blocks in the same order `apply` visits them.
    pub fn param_blocks(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.params.kernels.data());
            out.push(layer.params.biases.as_slice());
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    kind: l.kind,
                    params: l.params.cast::<U>(),
                    relu: l.relu,
                })
                .collect(),
        }
    }
}
