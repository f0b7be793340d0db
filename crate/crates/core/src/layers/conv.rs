use crate::error::{Error, Result};
use crate::param::ParamTensor;
use crate::rng::RngStream;
use crate::tensor::{gemm, MatRef, Tensor};

use super::glorot_uniform;

/// 1-D cross-correlation with zero "same" padding of `(kernel_size - 1) / 2` per side.
///
/// Kernels: `[out_channels, in_channels, kernel_size]`, bias: `[out_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernels: ParamTensor,
    pub bias: ParamTensor,
}

pub struct Conv1dContext {
    /// im2col buffer laid out `[in_ch * k, batch * len]`.
    cols: Vec<f64>,
    batch: usize,
    len: usize,
    dims: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct Conv1dGrads {
    pub grad_x: Tensor,
    pub grad_kernels: Tensor,
    pub grad_bias: Tensor,
}

impl Conv1d {
    pub fn new(kernels: Tensor, bias: Tensor) -> Result<Self> {
        if kernels.rank() != 3 {
            return Err(Error::InvalidSpec(format!(
                "conv kernels must be [out, in, k], got {:?}",
                kernels.shape()
            )));
        }
        let (out_ch, _, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
        if k % 2 == 0 {
            return Err(Error::InvalidSpec(format!(
                "conv kernel size must be odd for same padding, got {k}"
            )));
        }
        bias.ensure_shape(&[out_ch], "conv bias")?;
        Ok(Self {
            kernels: kernels.into(),
            bias: bias.into(),
        })
    }

    pub fn glorot(in_ch: usize, out_ch: usize, k: usize, rng: &mut RngStream) -> Result<Self> {
        let kernels = glorot_uniform(&[out_ch, in_ch, k], in_ch * k, out_ch * k, rng);
        Self::new(kernels, Tensor::zeros(&[out_ch]))
    }

    /// `(out_channels, in_channels, kernel_size)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.kernels.shape();
        (s[0], s[1], s[2])
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Conv1dContext)> {
        let (out_ch, in_ch, k) = self.dims();
        if x.rank() != 3 || x.shape()[1] != in_ch {
            return Err(Error::Dimension(format!(
                "conv1d expects [batch, {in_ch}, time], got {:?}",
                x.shape()
            )));
        }
        let (batch, len) = (x.shape()[0], x.shape()[2]);
        let pad = (k - 1) / 2;
        let cols_n = batch * len;
        let xd = x.data();

        let mut cols = vec![0.0; in_ch * k * cols_n];
        for c in 0..in_ch {
            for j in 0..k {
                let row = &mut cols[(c * k + j) * cols_n..(c * k + j + 1) * cols_n];
                for b in 0..batch {
                    let src = &xd[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                    for t in 0..len {
                        let s = t + j;
                        if s >= pad && s - pad < len {
                            row[b * len + t] = src[s - pad];
                        }
                    }
                }
            }
        }

        // [out, in*k] x [in*k, batch*len]
        let mut flat = vec![0.0; out_ch * cols_n];
        gemm(
            out_ch,
            in_ch * k,
            cols_n,
            1.0,
            MatRef::row_major(self.kernels.value.data(), in_ch * k),
            MatRef::row_major(&cols, cols_n),
            0.0,
            &mut flat,
        );

        let bias = self.bias.value.data();
        let mut y = Tensor::zeros(&[batch, out_ch, len]);
        let yd = y.data_mut();
        for o in 0..out_ch {
            for b in 0..batch {
                let dst = &mut yd[(b * out_ch + o) * len..(b * out_ch + o + 1) * len];
                let src = &flat[o * cols_n + b * len..o * cols_n + (b + 1) * len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[o];
                }
            }
        }
        y.ensure_finite("conv1d forward")?;
        Ok((
            y,
            Conv1dContext {
                cols,
                batch,
                len,
                dims: (out_ch, in_ch, k),
            },
        ))
    }

    pub fn backward(&self, ctx: Conv1dContext, grad_out: &Tensor) -> Result<Conv1dGrads> {
        let (out_ch, in_ch, k) = self.dims();
        if ctx.dims != (out_ch, in_ch, k) {
            return Err(Error::Contract(format!(
                "conv1d context built for kernels {:?}, layer has {:?}",
                ctx.dims,
                (out_ch, in_ch, k)
            )));
        }
        let (batch, len) = (ctx.batch, ctx.len);
        if grad_out.shape() != [batch, out_ch, len] {
            return Err(Error::Contract(format!(
                "conv1d grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                [batch, out_ch, len]
            )));
        }
        let cols_n = batch * len;
        let pad = (k - 1) / 2;
        let gd = grad_out.data();

        // Re-lay grad_out as [out, batch*len] to match the im2col buffer.
        let mut g_flat = vec![0.0; out_ch * cols_n];
        let mut grad_bias = Tensor::zeros(&[out_ch]);
        for o in 0..out_ch {
            let mut acc = 0.0;
            for b in 0..batch {
                let src = &gd[(b * out_ch + o) * len..(b * out_ch + o + 1) * len];
                g_flat[o * cols_n + b * len..o * cols_n + (b + 1) * len].copy_from_slice(src);
                acc += src.iter().sum::<f64>();
            }
            grad_bias.data_mut()[o] = acc;
        }

        let mut grad_kernels = Tensor::zeros(&[out_ch, in_ch, k]);
        gemm(
            out_ch,
            cols_n,
            in_ch * k,
            1.0,
            MatRef::row_major(&g_flat, cols_n),
            MatRef::transposed(&ctx.cols, cols_n),
            0.0,
            grad_kernels.data_mut(),
        );

        let mut grad_cols = vec![0.0; in_ch * k * cols_n];
        gemm(
            in_ch * k,
            out_ch,
            cols_n,
            1.0,
            MatRef::transposed(self.kernels.value.data(), in_ch * k),
            MatRef::row_major(&g_flat, cols_n),
            0.0,
            &mut grad_cols,
        );

        let mut grad_x = Tensor::zeros(&[batch, in_ch, len]);
        let gx = grad_x.data_mut();
        for c in 0..in_ch {
            for j in 0..k {
                let row = &grad_cols[(c * k + j) * cols_n..(c * k + j + 1) * cols_n];
                for b in 0..batch {
                    let dst = &mut gx[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                    for t in 0..len {
                        let s = t + j;
                        if s >= pad && s - pad < len {
                            dst[s - pad] += row[b * len + t];
                        }
                    }
                }
            }
        }

        Ok(Conv1dGrads {
            grad_x,
            grad_kernels,
            grad_bias,
        })
    }
}
