//! Convolution kernels and their exact gradients.
//!
//! `conv2d` is cross-correlation (no kernel flip) with zero padding.
//! `conv_transpose2d` with the same parameter tensor is its exact adjoint:
//! for zero bias, `<conv2d(x), y> == <x, conv_transpose2d(y)>`. Convolution
//! kernels are stored `(out_ch, in_ch, kh, kw)`; transposed-convolution
//! layers use the same buffer viewed as `(in_ch, out_ch, kh, kw)`.

use super::tensor::Tensor4;
use crate::error::{invalid, Result};
use crate::scalar::{cast, to_f64, Scalar};

/// Kernel weights, per-output-channel biases, stride and zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Scalar> {
    pub kernels: Tensor4<T>,
    pub biases: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(kernels: Tensor4<T>, biases: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        if stride < 1 {
            return Err(invalid("stride must be >= 1"));
        }
        Ok(Self {
            kernels,
            biases,
            stride,
            padding,
        })
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            kernels: self.kernels.cast::<U>(),
            biases: self.biases.iter().map(|&b| cast::<U>(to_f64(b))).collect(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Gradients matching a `LayerParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T: Scalar> {
    pub kernels: Tensor4<T>,
    pub biases: Vec<T>,
}

/// `floor((extent + 2 pad - k) / stride) + 1`, rejecting empty outputs.
pub fn conv_output_dim(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if padded < k {
        return Err(invalid(format!(
            "kernel {k} exceeds padded extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// `(extent - 1) * stride - 2 pad + k`, rejecting empty outputs.
pub fn conv_transpose_output_dim(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let grown = (extent - 1) * stride + k;
    if grown < 2 * pad + 1 {
        return Err(invalid(format!(
            "padding {pad} swallows the whole transposed output ({grown})"
        )));
    }
    Ok(grown - 2 * pad)
}

fn check_conv_shapes<T: Scalar>(x: &Tensor4<T>, p: &LayerParams<T>) -> Result<(usize, usize)> {
    let [oc, ic, kh, kw] = *p.kernels.shape();
    if x.shape()[1] != ic {
        return Err(invalid(format!(
            "conv input has {} channels but kernels expect {ic}",
            x.shape()[1]
        )));
    }
    if p.biases.len() != oc {
        return Err(invalid("bias count must equal output channels"));
    }
    let oh = conv_output_dim(x.shape()[2], kh, p.stride, p.padding)?;
    let ow = conv_output_dim(x.shape()[3], kw, p.stride, p.padding)?;
    Ok((oh, ow))
}

/// Cross-correlation with zero padding plus per-channel bias.
pub fn conv2d<T: Scalar>(x: &Tensor4<T>, p: &LayerParams<T>) -> Result<Tensor4<T>> {
    let (oh, ow) = check_conv_shapes(x, p)?;
    let [n_batch, ic, h, w] = *x.shape();
    let [oc, _, kh, kw] = *p.kernels.shape();
    let mut out = Tensor4::<T>::zeros([n_batch, oc, oh, ow]);
    for n in 0..n_batch {
        for o in 0..oc {
            let bias = to_f64(p.biases[o]);
            for i in 0..oh {
                let ih0 = (i * p.stride) as isize - p.padding as isize;
                for j in 0..ow {
                    let iw0 = (j * p.stride) as isize - p.padding as isize;
                    let mut acc = bias;
                    for c in 0..ic {
                        for u in 0..kh {
                            let ih = ih0 + u as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let iw = iw0 + v as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc += to_f64(x.get(n, c, ih as usize, iw as usize))
                                    * to_f64(p.kernels.get(o, c, u, v));
                            }
                        }
                    }
                    out.set(n, o, i, j, cast::<T>(acc));
                }
            }
        }
    }
    Ok(out)
}

/// Analytic gradients of `conv2d` with respect to its input, kernels and
/// biases, given the upstream gradient at the output.
pub fn conv2d_grad<T: Scalar>(
    x: &Tensor4<T>,
    p: &LayerParams<T>,
    upstream: &Tensor4<T>,
) -> Result<(Tensor4<T>, LayerGrads<T>)> {
    let (oh, ow) = check_conv_shapes(x, p)?;
    let [n_batch, ic, h, w] = *x.shape();
    let [oc, _, kh, kw] = *p.kernels.shape();
    if *upstream.shape() != [n_batch, oc, oh, ow] {
        return Err(invalid(format!(
            "upstream shape {:?} does not match conv output {:?}",
            upstream.shape(),
            [n_batch, oc, oh, ow]
        )));
    }

    let mut gx = vec![0.0f64; x.len()];
    let mut gk = vec![0.0f64; p.kernels.len()];
    let mut gb = vec![0.0f64; oc];
    for n in 0..n_batch {
        for o in 0..oc {
            for i in 0..oh {
                let ih0 = (i * p.stride) as isize - p.padding as isize;
                for j in 0..ow {
                    let iw0 = (j * p.stride) as isize - p.padding as isize;
                    let up = to_f64(upstream.get(n, o, i, j));
                    gb[o] += up;
                    for c in 0..ic {
                        for u in 0..kh {
                            let ih = ih0 + u as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let iw = iw0 + v as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let xi = x.index(n, c, ih as usize, iw as usize);
                                let ki = p.kernels.index(o, c, u, v);
                                gx[xi] += up * to_f64(p.kernels.data()[ki]);
                                gk[ki] += up * to_f64(x.data()[xi]);
                            }
                        }
                    }
                }
            }
        }
    }

    let grad_x = Tensor4::from_vec(*x.shape(), gx.into_iter().map(cast::<T>).collect())?;
    let grads = LayerGrads {
        kernels: Tensor4::from_vec(*p.kernels.shape(), gk.into_iter().map(cast::<T>).collect())?,
        biases: gb.into_iter().map(cast::<T>).collect(),
    };
    Ok((grad_x, grads))
}

fn check_conv_transpose_shapes<T: Scalar>(x: &Tensor4<T>, p: &LayerParams<T>) -> Result<(usize, usize)> {
    let [ic, oc, kh, kw] = *p.kernels.shape();
    if x.shape()[1] != ic {
        return Err(invalid(format!(
            "transposed-conv input has {} channels but kernels expect {ic}",
            x.shape()[1]
        )));
    }
    if p.biases.len() != oc {
        return Err(invalid("bias count must equal output channels"));
    }
    let oh = conv_transpose_output_dim(x.shape()[2], kh, p.stride, p.padding)?;
    let ow = conv_transpose_output_dim(x.shape()[3], kw, p.stride, p.padding)?;
    Ok((oh, ow))
}

/// Transposed convolution (the adjoint of `conv2d` with the same kernel
/// buffer) plus per-channel bias.
pub fn conv_transpose2d<T: Scalar>(x: &Tensor4<T>, p: &LayerParams<T>) -> Result<Tensor4<T>> {
    let (oh, ow) = check_conv_transpose_shapes(x, p)?;
    let [n_batch, ic, h, w] = *x.shape();
    let [_, oc, kh, kw] = *p.kernels.shape();

    let mut acc = vec![0.0f64; n_batch * oc * oh * ow];
    let out_index =
        |n: usize, o: usize, i: usize, j: usize| ((n * oc + o) * oh + i) * ow + j;
    for n in 0..n_batch {
        for c in 0..ic {
            for hi in 0..h {
                let oh0 = (hi * p.stride) as isize - p.padding as isize;
                for wi in 0..w {
                    let ow0 = (wi * p.stride) as isize - p.padding as isize;
                    let v = to_f64(x.get(n, c, hi, wi));
                    if v == 0.0 {
                        continue;
                    }
                    for o in 0..oc {
                        for u in 0..kh {
                            let i = oh0 + u as isize;
                            if i < 0 || i >= oh as isize {
                                continue;
                            }
                            for vv in 0..kw {
                                let j = ow0 + vv as isize;
                                if j < 0 || j >= ow as isize {
                                    continue;
                                }
                                acc[out_index(n, o, i as usize, j as usize)] +=
                                    v * to_f64(p.kernels.get(c, o, u, vv));
                            }
                        }
                    }
                }
            }
        }
    }
    for n in 0..n_batch {
        for o in 0..oc {
            let b = to_f64(p.biases[o]);
            for i in 0..oh {
                for j in 0..ow {
                    acc[out_index(n, o, i, j)] += b;
                }
            }
        }
    }
    Tensor4::from_vec([n_batch, oc, oh, ow], acc.into_iter().map(cast::<T>).collect())
}

/// Analytic gradients of `conv_transpose2d`.
pub fn conv_transpose2d_grad<T: Scalar>(
    x: &Tensor4<T>,
    p: &LayerParams<T>,
    upstream: &Tensor4<T>,
) -> Result<(Tensor4<T>, LayerGrads<T>)> {
    let (oh, ow) = check_conv_transpose_shapes(x, p)?;
    let [n_batch, ic, h, w] = *x.shape();
    let [_, oc, kh, kw] = *p.kernels.shape();
    if *upstream.shape() != [n_batch, oc, oh, ow] {
        return Err(invalid(format!(
            "upstream shape {:?} does not match transposed-conv output {:?}",
            upstream.shape(),
            [n_batch, oc, oh, ow]
        )));
    }

    let mut gx = vec![0.0f64; x.len()];
    let mut gk = vec![0.0f64; p.kernels.len()];
    let mut gb = vec![0.0f64; oc];
    for n in 0..n_batch {
        for o in 0..oc {
            for i in 0..oh {
                for j in 0..ow {
                    gb[o] += to_f64(upstream.get(n, o, i, j));
                }
            }
        }
        for c in 0..ic {
            for hi in 0..h {
                let oh0 = (hi * p.stride) as isize - p.padding as isize;
                for wi in 0..w {
                    let ow0 = (wi * p.stride) as isize - p.padding as isize;
                    let xi = x.index(n, c, hi, wi);
                    let xv = to_f64(x.data()[xi]);
                    let mut acc = 0.0f64;
                    for o in 0..oc {
                        for u in 0..kh {
                            let i = oh0 + u as isize;
                            if i < 0 || i >= oh as isize {
                                continue;
                            }
                            for vv in 0..kw {
                                let j = ow0 + vv as isize;
                                if j < 0 || j >= ow as isize {
                                    continue;
                                }
                                let up = to_f64(upstream.get(n, o, i as usize, j as usize));
                                let ki = p.kernels.index(c, o, u, vv);
                                acc += up * to_f64(p.kernels.data()[ki]);
                                gk[ki] += up * xv;
                            }
                        }
                    }
                    gx[xi] = acc;
                }
            }
        }
    }

    let grad_x = Tensor4::from_vec(*x.shape(), gx.into_iter().map(cast::<T>).collect())?;
    let grads = LayerGrads {
        kernels: Tensor4::from_vec(*p.kernels.shape(), gk.into_iter().map(cast::<T>).collect())?,
        biases: gb.into_iter().map(cast::<T>).collect(),
    };
    Ok((grad_x, grads))
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Passes the upstream gradient where the pre-activation is strictly
/// positive; zero elsewhere, including exactly at zero.
pub fn relu_grad<T: Scalar>(preact: &Tensor4<T>, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    if preact.shape() != upstream.shape() {
        return Err(invalid("relu gradient shapes must match"));
    }
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(preact.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// Mean over all entries of the squared difference, and its gradient with
/// respect to `pred`: `2 (pred - target) / count`.
pub fn mse_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    if pred.shape() != target.shape() {
        return Err(invalid(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.len() as f64;
    let mut acc = 0.0f64;
    let mut grad = Tensor4::<T>::zeros(*pred.shape());
    for (g, (&p, &t)) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data().iter().zip(target.data()))
    {
        let d = to_f64(p) - to_f64(t);
        acc += d * d;
        *g = cast::<T>(2.0 * d / count);
    }
    Ok((cast::<T>(acc / count), grad))
}
