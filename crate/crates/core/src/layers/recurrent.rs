//! LSTM and Elman (tanh) recurrent layers with full backpropagation through time.
//!
//! LSTM gate weights are stored stacked along the first axis in the block
//! order input, forget, cell candidate, output: `w: [4H, in]`, `u: [4H, H]`,
//! `b: [4H]`. Block `g` of each is that gate's `W_g`, `U_g`, `b_g`.
//!
//! ```text
//! i = sigmoid(W_i x + U_i h + b_i)     f = sigmoid(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g)        o = sigmoid(W_o x + U_o h + b_o)
//! c' = f * c + i * g                   h' = o * tanh(c')
//! ```

use crate::error::{Error, Result};
use crate::param::ParamTensor;
use crate::rng::RngStream;
use crate::tensor::{gemm, MatRef, Tensor};

use super::{glorot_uniform, sigmoid};

pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w: ParamTensor,
    pub u: ParamTensor,
    pub b: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

pub struct LstmStepContext {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[batch, 4H]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    batch: usize,
    dims: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct LstmStepGrads {
    pub grad_x: Tensor,
    pub grad_h_prev: Tensor,
    pub grad_c_prev: Tensor,
    pub params: LstmGrads,
}

pub struct LstmSequenceContext {
    xs: Vec<f64>,
    steps: Vec<LstmStepContext>,
    batch: usize,
    dims: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct LstmSequenceGrads {
    pub grad_xs: Tensor,
    pub grad_h0: Tensor,
    pub grad_c0: Tensor,
    pub params: LstmGrads,
}

/// Copy timestep `t` of a `[batch, time, dim]` buffer into `[batch, dim]`.
fn gather_step(xs: &[f64], batch: usize, time: usize, dim: usize, t: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * dim);
    for b in 0..batch {
        let o = (b * time + t) * dim;
        out.extend_from_slice(&xs[o..o + dim]);
    }
    out
}

fn scatter_step(dst: &mut [f64], src: &[f64], batch: usize, time: usize, dim: usize, t: usize) {
    for b in 0..batch {
        let o = (b * time + t) * dim;
        dst[o..o + dim].copy_from_slice(&src[b * dim..(b + 1) * dim]);
    }
}

fn check_state(t: Option<&Tensor>, batch: usize, hidden: usize, what: &str) -> Result<Vec<f64>> {
    match t {
        None => Ok(vec![0.0; batch * hidden]),
        Some(t) => {
            t.ensure_shape(&[batch, hidden], what)?;
            Ok(t.data().to_vec())
        }
    }
}

fn to_tensor(data: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("buffer sized for shape")
}

impl LstmLayer {
    pub fn new(w: Tensor, u: Tensor, b: Tensor) -> Result<Self> {
        if w.rank() != 2 || w.shape()[0] % 4 != 0 {
            return Err(Error::InvalidSpec(format!(
                "lstm input weights must be [4H, in], got {:?}",
                w.shape()
            )));
        }
        let hidden = w.shape()[0] / 4;
        u.ensure_shape(&[4 * hidden, hidden], "lstm recurrent weights")?;
        b.ensure_shape(&[4 * hidden], "lstm bias")?;
        Ok(Self {
            w: w.into(),
            u: u.into(),
            b: b.into(),
        })
    }

    /// Glorot-uniform per gate block, zero biases except the forget gate at 1.0.
    pub fn glorot(input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let w = glorot_uniform(&[4 * hidden, input], input, hidden, rng);
        let u = glorot_uniform(&[4 * hidden, hidden], hidden, hidden, rng);
        let b = Tensor::from_fn(&[4 * hidden], |i| {
            if (hidden..2 * hidden).contains(&i) {
                FORGET_BIAS_INIT
            } else {
                0.0
            }
        });
        Self::new(w, u, b).expect("shapes are consistent")
    }

    /// `(input_dim, hidden)`
    pub fn dims(&self) -> (usize, usize) {
        (self.w.shape()[1], self.u.shape()[1])
    }

    pub fn zero_grads(&self) -> LstmGrads {
        LstmGrads {
            w: Tensor::zeros(self.w.shape()),
            u: Tensor::zeros(self.u.shape()),
            b: Tensor::zeros(self.b.shape()),
        }
    }

    /// `x W^T + b` for `rows` stacked inputs.
    fn input_projection(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (input, hidden) = self.dims();
        let h4 = 4 * hidden;
        let mut z = Vec::with_capacity(rows * h4);
        for _ in 0..rows {
            z.extend_from_slice(self.b.value.data());
        }
        gemm(rows, input, h4, 1.0, MatRef::row_major(x, input), MatRef::transposed(self.w.value.data(), input), 1.0, &mut z);
        z
    }

    /// One step given the input projection `z`. `x` is kept for the step-level
    /// backward and left empty by the sequence path, which keeps all inputs.
    fn step_raw(&self, x: Vec<f64>, mut z: Vec<f64>, h_prev: Vec<f64>, c_prev: Vec<f64>, batch: usize) -> (Vec<f64>, Vec<f64>, LstmStepContext) {
        let (input, hidden) = self.dims();
        let h4 = 4 * hidden;
        gemm(batch, hidden, h4, 1.0, MatRef::row_major(&h_prev, hidden), MatRef::transposed(self.u.value.data(), hidden), 1.0, &mut z);

        let mut h = vec![0.0; batch * hidden];
        let mut c = vec![0.0; batch * hidden];
        let mut tanh_c = vec![0.0; batch * hidden];
        for bi in 0..batch {
            let zr = &mut z[bi * h4..(bi + 1) * h4];
            for j in 0..hidden {
                let i_g = sigmoid(zr[j]);
                let f_g = sigmoid(zr[hidden + j]);
                let g_g = zr[2 * hidden + j].tanh();
                let o_g = sigmoid(zr[3 * hidden + j]);
                zr[j] = i_g;
                zr[hidden + j] = f_g;
                zr[2 * hidden + j] = g_g;
                zr[3 * hidden + j] = o_g;
                let k = bi * hidden + j;
                c[k] = f_g * c_prev[k] + i_g * g_g;
                tanh_c[k] = c[k].tanh();
                h[k] = o_g * tanh_c[k];
            }
        }
        let ctx = LstmStepContext {
            x,
            h_prev,
            c_prev,
            gates: z,
            tanh_c,
            batch,
            dims: (input, hidden),
        };
        (h, c, ctx)
    }

    /// Pre-activation gradient `[batch, 4H]` and `grad_c_prev` of one step.
    fn gate_grads(&self, ctx: &LstmStepContext, dh: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden = ctx.dims.1;
        let batch = ctx.batch;
        let h4 = 4 * hidden;
        let mut dz = vec![0.0; batch * h4];
        let mut dc_prev = vec![0.0; batch * hidden];
        for bi in 0..batch {
            let gr = &ctx.gates[bi * h4..(bi + 1) * h4];
            let dzr = &mut dz[bi * h4..(bi + 1) * h4];
            for j in 0..hidden {
                let k = bi * hidden + j;
                let (i_g, f_g, g_g, o_g) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                let tc = ctx.tanh_c[k];
                let d_o = dh[k] * tc;
                let dct = dc[k] + dh[k] * o_g * (1.0 - tc * tc);
                let d_i = dct * g_g;
                let d_g = dct * i_g;
                let d_f = dct * ctx.c_prev[k];
                dc_prev[k] = dct * f_g;
                dzr[j] = d_i * i_g * (1.0 - i_g);
                dzr[hidden + j] = d_f * f_g * (1.0 - f_g);
                dzr[2 * hidden + j] = d_g * (1.0 - g_g * g_g);
                dzr[3 * hidden + j] = d_o * o_g * (1.0 - o_g);
            }
        }
        (dz, dc_prev)
    }

    /// Returns `(grad_x, grad_h_prev, grad_c_prev)` and accumulates into `grads`.
    fn step_backward_raw(&self, ctx: &LstmStepContext, dh: &[f64], dc: &[f64], grads: &mut LstmGrads) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (input, hidden) = ctx.dims;
        let batch = ctx.batch;
        let h4 = 4 * hidden;
        let (dz, dc_prev) = self.gate_grads(ctx, dh, dc);
        gemm(h4, batch, input, 1.0, MatRef::transposed(&dz, h4), MatRef::row_major(&ctx.x, input), 1.0, grads.w.data_mut());
        gemm(h4, batch, hidden, 1.0, MatRef::transposed(&dz, h4), MatRef::row_major(&ctx.h_prev, hidden), 1.0, grads.u.data_mut());
        for row in dz.chunks(h4) {
            for (g, v) in grads.b.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; batch * input];
        gemm(batch, h4, input, 1.0, MatRef::row_major(&dz, h4), MatRef::row_major(self.w.value.data(), input), 0.0, &mut dx);
        let mut dh_prev = vec![0.0; batch * hidden];
        gemm(batch, h4, hidden, 1.0, MatRef::row_major(&dz, h4), MatRef::row_major(self.u.value.data(), hidden), 0.0, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }

    fn check_ctx(&self, dims: (usize, usize)) -> Result<()> {
        if dims != self.dims() {
            return Err(Error::Contract(format!(
                "lstm context built for (in, hidden) = {dims:?}, layer has {:?}",
                self.dims()
            )));
        }
        Ok(())
    }

    /// One LSTM step on `x: [batch, in]`, `h_prev, c_prev: [batch, H]`.
    pub fn step(&self, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor, LstmStepContext)> {
        let (input, hidden) = self.dims();
        if x.rank() != 2 || x.shape()[1] != input {
            return Err(Error::Dimension(format!("lstm step expects x [batch, {input}], got {:?}", x.shape())));
        }
        let batch = x.shape()[0];
        h_prev.ensure_shape(&[batch, hidden], "lstm h_prev")?;
        c_prev.ensure_shape(&[batch, hidden], "lstm c_prev")?;
        let z = self.input_projection(x.data(), batch);
        let (h, c, ctx) = self.step_raw(x.data().to_vec(), z, h_prev.data().to_vec(), c_prev.data().to_vec(), batch);
        let h = to_tensor(h, &[batch, hidden]);
        let c = to_tensor(c, &[batch, hidden]);
        c.ensure_finite("lstm step")?;
        Ok((h, c, ctx))
    }

    pub fn step_backward(&self, ctx: LstmStepContext, grad_h: &Tensor, grad_c: &Tensor) -> Result<LstmStepGrads> {
        self.check_ctx(ctx.dims)?;
        let (input, hidden) = ctx.dims;
        let batch = ctx.batch;
        if grad_h.shape() != [batch, hidden] || grad_c.shape() != [batch, hidden] {
            return Err(Error::Contract(format!(
                "lstm step backward: grads {:?}/{:?}, expected [{batch}, {hidden}]",
                grad_h.shape(),
                grad_c.shape()
            )));
        }
        let mut params = self.zero_grads();
        let (dx, dh, dc) = self.step_backward_raw(&ctx, grad_h.data(), grad_c.data(), &mut params);
        Ok(LstmStepGrads {
            grad_x: to_tensor(dx, &[batch, input]),
            grad_h_prev: to_tensor(dh, &[batch, hidden]),
            grad_c_prev: to_tensor(dc, &[batch, hidden]),
            params,
        })
    }

    /// Run over `xs: [batch, time, in]` from `(h0, c0)` (zeros when `None`).
    ///
    /// Returns `(hs: [batch, time, H], h_T, c_T, context)`.
    pub fn forward_sequence(
        &self,
        xs: &Tensor,
        h0: Option<&Tensor>,
        c0: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, Tensor, LstmSequenceContext)> {
        let (input, hidden) = self.dims();
        if xs.rank() != 3 || xs.shape()[2] != input {
            return Err(Error::Dimension(format!(
                "lstm expects [batch, time, {input}], got {:?}",
                xs.shape()
            )));
        }
        let (batch, time) = (xs.shape()[0], xs.shape()[1]);
        let mut h = check_state(h0, batch, hidden, "lstm h0")?;
        let mut c = check_state(c0, batch, hidden, "lstm c0")?;
        let mut hs = vec![0.0; batch * time * hidden];
        let mut steps = Vec::with_capacity(time);
        let zx = self.input_projection(xs.data(), batch * time);
        for t in 0..time {
            let z_t = gather_step(&zx, batch, time, 4 * hidden, t);
            let (h_next, c_next, ctx) = self.step_raw(Vec::new(), z_t, h, c, batch);
            scatter_step(&mut hs, &h_next, batch, time, hidden, t);
            steps.push(ctx);
            h = h_next;
            c = c_next;
        }
        let c_t = to_tensor(c, &[batch, hidden]);
        c_t.ensure_finite("lstm forward")?;
        Ok((
            to_tensor(hs, &[batch, time, hidden]),
            to_tensor(h, &[batch, hidden]),
            c_t,
            LstmSequenceContext {
                xs: xs.data().to_vec(),
                steps,
                batch,
                dims: (input, hidden),
            },
        ))
    }

    /// Backpropagation through time. `grad_hs` is the cotangent of every
    /// hidden output; `grad_h_last`/`grad_c_last` of the final state.
    pub fn backward_sequence(
        &self,
        ctx: LstmSequenceContext,
        grad_hs: &Tensor,
        grad_h_last: Option<&Tensor>,
        grad_c_last: Option<&Tensor>,
    ) -> Result<LstmSequenceGrads> {
        self.check_ctx(ctx.dims)?;
        let (input, hidden) = ctx.dims;
        let (batch, time) = (ctx.batch, ctx.steps.len());
        if grad_hs.shape() != [batch, time, hidden] {
            return Err(Error::Contract(format!(
                "lstm backward: grad_hs {:?}, forward produced {:?}",
                grad_hs.shape(),
                [batch, time, hidden]
            )));
        }
        let mut dh = check_state(grad_h_last, batch, hidden, "lstm grad_h_last")?;
        let mut dc = check_state(grad_c_last, batch, hidden, "lstm grad_c_last")?;
        let h4 = 4 * hidden;
        let rows = batch * time;
        let mut params = self.zero_grads();
        // Per-step pre-activation grads and previous states, stacked so the
        // weight and input gradients take one multiply each after the loop.
        let mut dz_all = vec![0.0; rows * h4];
        let mut h_prev_all = vec![0.0; rows * hidden];
        for (t, step) in ctx.steps.iter().enumerate().rev() {
            let g_t = gather_step(grad_hs.data(), batch, time, hidden, t);
            for (a, b) in dh.iter_mut().zip(&g_t) {
                *a += b;
            }
            let (dz, dc_prev) = self.gate_grads(step, &dh, &dc);
            let mut dh_prev = vec![0.0; batch * hidden];
            gemm(batch, h4, hidden, 1.0, MatRef::row_major(&dz, h4), MatRef::row_major(self.u.value.data(), hidden), 0.0, &mut dh_prev);
            scatter_step(&mut dz_all, &dz, batch, time, h4, t);
            scatter_step(&mut h_prev_all, &step.h_prev, batch, time, hidden, t);
            dh = dh_prev;
            dc = dc_prev;
        }
        gemm(h4, rows, input, 1.0, MatRef::transposed(&dz_all, h4), MatRef::row_major(&ctx.xs, input), 1.0, params.w.data_mut());
        gemm(h4, rows, hidden, 1.0, MatRef::transposed(&dz_all, h4), MatRef::row_major(&h_prev_all, hidden), 1.0, params.u.data_mut());
        for row in dz_all.chunks(h4) {
            for (g, v) in params.b.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut grad_xs = vec![0.0; rows * input];
        gemm(rows, h4, input, 1.0, MatRef::row_major(&dz_all, h4), MatRef::row_major(self.w.value.data(), input), 0.0, &mut grad_xs);
        Ok(LstmSequenceGrads {
            grad_xs: to_tensor(grad_xs, &[batch, time, input]),
            grad_h0: to_tensor(dh, &[batch, hidden]),
            grad_c0: to_tensor(dc, &[batch, hidden]),
            params,
        })
    }
}

/// Elman recurrence `h' = tanh(W x + U h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayer {
    pub w: ParamTensor,
    pub u: ParamTensor,
    pub b: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct RnnGrads {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

struct RnnStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    h: Vec<f64>,
}

pub struct RnnSequenceContext {
    steps: Vec<RnnStep>,
    batch: usize,
    dims: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct RnnSequenceGrads {
    pub grad_xs: Tensor,
    pub grad_h0: Tensor,
    pub params: RnnGrads,
}

impl RnnLayer {
    pub fn new(w: Tensor, u: Tensor, b: Tensor) -> Result<Self> {
        if w.rank() != 2 {
            return Err(Error::InvalidSpec(format!("rnn input weights must be [H, in], got {:?}", w.shape())));
        }
        let hidden = w.shape()[0];
        u.ensure_shape(&[hidden, hidden], "rnn recurrent weights")?;
        b.ensure_shape(&[hidden], "rnn bias")?;
        Ok(Self {
            w: w.into(),
            u: u.into(),
            b: b.into(),
        })
    }

    pub fn glorot(input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let w = glorot_uniform(&[hidden, input], input, hidden, rng);
        let u = glorot_uniform(&[hidden, hidden], hidden, hidden, rng);
        Self::new(w, u, Tensor::zeros(&[hidden])).expect("shapes are consistent")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.w.shape()[1], self.w.shape()[0])
    }

    pub fn forward_sequence(&self, xs: &Tensor, h0: Option<&Tensor>) -> Result<(Tensor, Tensor, RnnSequenceContext)> {
        let (input, hidden) = self.dims();
        if xs.rank() != 3 || xs.shape()[2] != input {
            return Err(Error::Dimension(format!("rnn expects [batch, time, {input}], got {:?}", xs.shape())));
        }
        let (batch, time) = (xs.shape()[0], xs.shape()[1]);
        let mut h = check_state(h0, batch, hidden, "rnn h0")?;
        let mut hs = vec![0.0; batch * time * hidden];
        let mut steps = Vec::with_capacity(time);
        for t in 0..time {
            let x = gather_step(xs.data(), batch, time, input, t);
            let mut z = Vec::with_capacity(batch * hidden);
            for _ in 0..batch {
                z.extend_from_slice(self.b.value.data());
            }
            gemm(batch, input, hidden, 1.0, MatRef::row_major(&x, input), MatRef::transposed(self.w.value.data(), input), 1.0, &mut z);
            gemm(batch, hidden, hidden, 1.0, MatRef::row_major(&h, hidden), MatRef::transposed(self.u.value.data(), hidden), 1.0, &mut z);
            z.iter_mut().for_each(|v| *v = v.tanh());
            scatter_step(&mut hs, &z, batch, time, hidden, t);
            steps.push(RnnStep { x, h_prev: h, h: z.clone() });
            h = z;
        }
        let h_t = to_tensor(h, &[batch, hidden]);
        h_t.ensure_finite("rnn forward")?;
        Ok((
            to_tensor(hs, &[batch, time, hidden]),
            h_t,
            RnnSequenceContext { steps, batch, dims: (input, hidden) },
        ))
    }

    pub fn backward_sequence(&self, ctx: RnnSequenceContext, grad_hs: &Tensor, grad_h_last: Option<&Tensor>) -> Result<RnnSequenceGrads> {
        if ctx.dims != self.dims() {
            return Err(Error::Contract(format!("rnn context built for {:?}, layer has {:?}", ctx.dims, self.dims())));
        }
        let (input, hidden) = ctx.dims;
        let (batch, time) = (ctx.batch, ctx.steps.len());
        if grad_hs.shape() != [batch, time, hidden] {
            return Err(Error::Contract(format!("rnn backward: grad_hs {:?}, expected {:?}", grad_hs.shape(), [batch, time, hidden])));
        }
        let mut dh = check_state(grad_h_last, batch, hidden, "rnn grad_h_last")?;
        let mut params = RnnGrads {
            w: Tensor::zeros(self.w.shape()),
            u: Tensor::zeros(self.u.shape()),
            b: Tensor::zeros(self.b.shape()),
        };
        let mut grad_xs = vec![0.0; batch * time * input];
        for (t, step) in ctx.steps.iter().enumerate().rev() {
            let g_t = gather_step(grad_hs.data(), batch, time, hidden, t);
            let dz: Vec<f64> = dh
                .iter()
                .zip(&g_t)
                .zip(&step.h)
                .map(|((a, b), h)| (a + b) * (1.0 - h * h))
                .collect();
            gemm(hidden, batch, input, 1.0, MatRef::transposed(&dz, hidden), MatRef::row_major(&step.x, input), 1.0, params.w.data_mut());
            gemm(hidden, batch, hidden, 1.0, MatRef::transposed(&dz, hidden), MatRef::row_major(&step.h_prev, hidden), 1.0, params.u.data_mut());
            for row in dz.chunks(hidden) {
                for (g, v) in params.b.data_mut().iter_mut().zip(row) {
                    *g += v;
                }
            }
            let mut dx = vec![0.0; batch * input];
            gemm(batch, hidden, input, 1.0, MatRef::row_major(&dz, hidden), MatRef::row_major(self.w.value.data(), input), 0.0, &mut dx);
            scatter_step(&mut grad_xs, &dx, batch, time, input, t);
            let mut dh_prev = vec![0.0; batch * hidden];
            gemm(batch, hidden, hidden, 1.0, MatRef::row_major(&dz, hidden), MatRef::row_major(self.u.value.data(), hidden), 0.0, &mut dh_prev);
            dh = dh_prev;
        }
        Ok(RnnSequenceGrads {
            grad_xs: to_tensor(grad_xs, &[batch, time, input]),
            grad_h0: to_tensor(dh, &[batch, hidden]),
            params,
        })
    }
}
