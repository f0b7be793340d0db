use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct ReluContext {
    mask: Vec<bool>,
    shape: Vec<usize>,
}

/// `max(0, x)`; the cached mask marks `x > 0`, so the subgradient at 0 is 0.
pub fn relu(x: &Tensor) -> (Tensor, ReluContext) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
    let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
    (
        y,
        ReluContext {
            mask,
            shape: x.shape().to_vec(),
        },
    )
}

pub fn relu_backward(ctx: ReluContext, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != ctx.shape.as_slice() {
        return Err(Error::Contract(format!(
            "relu backward: grad {:?} vs forward {:?}",
            grad_out.shape(),
            ctx.shape
        )));
    }
    let mut g = grad_out.clone();
    for (v, &keep) in g.data_mut().iter_mut().zip(&ctx.mask) {
        if !keep {
            *v = 0.0;
        }
    }
    Ok(g)
}
