use crate::error::{Error, Result};
use crate::param::ParamTensor;
use crate::rng::RngStream;
use crate::tensor::{gemm, MatRef, Tensor};

use super::glorot_uniform;

/// Fully connected layer `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

pub struct DenseContext {
    x: Tensor,
    dims: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub grad_x: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::InvalidSpec(format!(
                "dense weight must be [out, in], got {:?}",
                weight.shape()
            )));
        }
        bias.ensure_shape(&[weight.shape()[0]], "dense bias")?;
        Ok(Self {
            weight: weight.into(),
            bias: bias.into(),
        })
    }

    pub fn glorot(input: usize, output: usize, rng: &mut RngStream) -> Self {
        let w = glorot_uniform(&[output, input], input, output, rng);
        Self::new(w, Tensor::zeros(&[output])).expect("shapes are consistent")
    }

    /// `(out, in)`
    pub fn dims(&self) -> (usize, usize) {
        (self.weight.shape()[0], self.weight.shape()[1])
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DenseContext)> {
        let (out, inp) = self.dims();
        if x.rank() != 2 || x.shape()[1] != inp {
            return Err(Error::Dimension(format!(
                "dense expects [batch, {inp}], got {:?}",
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let mut y = Tensor::zeros(&[batch, out]);
        for row in y.data_mut().chunks_mut(out) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(
            batch,
            inp,
            out,
            1.0,
            MatRef::row_major(x.data(), inp),
            MatRef::transposed(self.weight.value.data(), inp),
            1.0,
            y.data_mut(),
        );
        y.ensure_finite("dense forward")?;
        Ok((
            y,
            DenseContext {
                x: x.clone(),
                dims: (out, inp),
            },
        ))
    }

    pub fn backward(&self, ctx: DenseContext, grad_out: &Tensor) -> Result<DenseGrads> {
        let (out, inp) = self.dims();
        let batch = ctx.x.shape()[0];
        if ctx.dims != (out, inp) || grad_out.shape() != [batch, out] {
            return Err(Error::Contract(format!(
                "dense backward: context {:?}, layer {:?}, grad {:?}",
                ctx.dims,
                (out, inp),
                grad_out.shape()
            )));
        }
        let mut grad_weight = Tensor::zeros(&[out, inp]);
        gemm(
            out,
            batch,
            inp,
            1.0,
            MatRef::transposed(grad_out.data(), out),
            MatRef::row_major(ctx.x.data(), inp),
            0.0,
            grad_weight.data_mut(),
        );
        let mut grad_x = Tensor::zeros(&[batch, inp]);
        gemm(
            batch,
            out,
            inp,
            1.0,
            MatRef::row_major(grad_out.data(), out),
            MatRef::row_major(self.weight.value.data(), inp),
            0.0,
            grad_x.data_mut(),
        );
        let mut grad_bias = Tensor::zeros(&[out]);
        for row in grad_out.data().chunks(out) {
            for (g, v) in grad_bias.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        Ok(DenseGrads {
            grad_x,
            grad_weight,
            grad_bias,
        })
    }
}
