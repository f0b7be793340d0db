use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct MaxPoolContext {
    /// Flat input offset of the winning element for each output element.
    argmax: Vec<usize>,
    input_shape: [usize; 3],
}

/// Non-overlapping max pooling along time with window = stride = `pool`.
///
/// Output length is `floor(len / pool)`; trailing elements that do not fill a
/// window are dropped. Ties go to the first position.
pub fn maxpool1d_forward(x: &Tensor, pool: usize) -> Result<(Tensor, MaxPoolContext)> {
    if pool == 0 {
        return Err(Error::Parameter("pool size must be positive".into()));
    }
    if x.rank() != 3 || x.shape()[2] < pool {
        return Err(Error::Dimension(format!(
            "maxpool1d({pool}) needs [batch, ch, time >= {pool}], got {:?}",
            x.shape()
        )));
    }
    let (batch, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out_len = len / pool;
    let xd = x.data();
    let mut y = Tensor::zeros(&[batch, ch, out_len]);
    let mut argmax = Vec::with_capacity(batch * ch * out_len);
    let yd = y.data_mut();
    for row in 0..batch * ch {
        for t in 0..out_len {
            let start = row * len + t * pool;
            let mut best = start;
            for i in start + 1..start + pool {
                if xd[i] > xd[best] {
                    best = i;
                }
            }
            yd[row * out_len + t] = xd[best];
            argmax.push(best);
        }
    }
    Ok((
        y,
        MaxPoolContext {
            argmax,
            input_shape: [batch, ch, len],
        },
    ))
}

pub fn maxpool1d_backward(ctx: MaxPoolContext, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != ctx.argmax.len() {
        return Err(Error::Contract(format!(
            "maxpool backward: grad {:?} does not match {} pooled outputs",
            grad_out.shape(),
            ctx.argmax.len()
        )));
    }
    let mut g = Tensor::zeros(&ctx.input_shape);
    let gd = g.data_mut();
    for (&src, &v) in ctx.argmax.iter().zip(grad_out.data()) {
        gd[src] += v;
    }
    Ok(g)
}
