use crate::error::{Error, Result};
use crate::layers::{
    maxpool1d_backward, maxpool1d_forward, relu, relu_backward, BatchNorm, BatchNormContext, Conv1d,
    Conv1dContext, Dense, DenseContext, Dropout, DropoutContext, LstmLayer, LstmSequenceContext,
    MaxPoolContext, Mode, ReluContext, RnnLayer, RnnSequenceContext,
};
use crate::param::ParamTensor;
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::spec::{ModelKind, ModelSpec, POOL_SIZE};

/// conv -> batch norm -> ReLU -> max-pool(2)
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentStack {
    None,
    Lstm(Vec<LstmLayer>),
    Rnn(Vec<RnnLayer>),
}

/// Final `(h, c)` of one recurrent layer, detached from any gradient graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    pub blocks: Vec<ConvBlock>,
    pub recurrent: RecurrentStack,
    pub dropout: Dropout,
    pub head: Dense,
    state: Vec<LayerState>,
}

enum RecCtx {
    Lstm(LstmSequenceContext),
    Rnn(RnnSequenceContext),
}

struct BlockCtx {
    conv: Conv1dContext,
    bn: BatchNormContext,
    relu: ReluContext,
    pool: MaxPoolContext,
}

/// Everything `Model::backward` needs from the matching forward call.
pub struct ForwardCache {
    blocks: Vec<BlockCtx>,
    /// `[batch, channels, time]` entering the recurrent stack or the flatten.
    feature_shape: [usize; 3],
    recurrent: Vec<RecCtx>,
    dropouts: Vec<DropoutContext>,
    head: DenseContext,
}

/// `[b, c, t] -> [b, t, c]` (and back with the arguments swapped).
fn swap_last_axes(x: &[f64], b: usize, c: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                out[(bi * t + ti) * c + ci] = x[(bi * c + ci) * t + ti];
            }
        }
    }
    out
}

impl Model {
    /// Build a freshly initialized model. Layers draw from `rng` in graph order.
    pub fn build(spec: ModelSpec, rng: &mut RngStream) -> Result<Model> {
        spec.validate()?;
        let mut blocks = Vec::new();
        let mut channels = spec.input_channels;
        if spec.kind.has_conv() {
            for &(k, filters) in &spec.conv {
                blocks.push(ConvBlock {
                    conv: Conv1d::glorot(channels, filters, k, rng)?,
                    bn: BatchNorm::new(filters),
                });
                channels = filters;
            }
        }
        let recurrent = match spec.kind {
            ModelKind::Cnn => RecurrentStack::None,
            ModelKind::CnnLstm | ModelKind::Lstm => RecurrentStack::Lstm(
                (0..spec.lstm_layers)
                    .map(|l| LstmLayer::glorot(if l == 0 { channels } else { spec.hidden }, spec.hidden, rng))
                    .collect(),
            ),
            ModelKind::Rnn => RecurrentStack::Rnn(
                (0..spec.lstm_layers)
                    .map(|l| RnnLayer::glorot(if l == 0 { channels } else { spec.hidden }, spec.hidden, rng))
                    .collect(),
            ),
        };
        let head_in = match spec.kind {
            ModelKind::Cnn => channels * spec.pooled_len(),
            _ => spec.hidden,
        };
        let head = Dense::glorot(head_in, spec.output_dim, rng);
        // The plain RNN baseline stacks its layers without dropout.
        let rate = match spec.kind {
            ModelKind::CnnLstm | ModelKind::Lstm => spec.dropout_rate,
            _ => 0.0,
        };
        Ok(Model {
            dropout: Dropout::new(rate)?,
            spec,
            blocks,
            recurrent,
            head,
            state: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn is_stateful(&self) -> bool {
        self.spec.kind.is_stateful()
    }

    pub fn state(&self) -> &[LayerState] {
        &self.state
    }

    /// Batch size of the carried recurrent state, if any.
    pub fn state_batch(&self) -> Option<usize> {
        self.state.first().map(|s| s.h.shape()[0])
    }

    pub fn reset_states(&mut self) {
        self.state.clear();
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, mut rng: Option<&mut RngStream>) -> Result<(Tensor, ForwardCache)> {
        let spec = &self.spec;
        if x.rank() != 3 || x.shape()[1] != spec.input_channels || x.shape()[2] != spec.window_len {
            return Err(Error::Dimension(format!(
                "model expects [batch, {}, {}], got {:?}",
                spec.input_channels,
                spec.window_len,
                x.shape()
            )));
        }
        if mode == Mode::Train && rng.is_none() && self.dropout.rate() > 0.0 {
            return Err(Error::Contract("train-mode forward needs an rng".into()));
        }
        let batch = x.shape()[0];
        if let Some(sb) = self.state_batch() {
            if sb != batch {
                return Err(Error::Dimension(format!(
                    "carried state has batch {sb}, input has batch {batch}; reset states first"
                )));
            }
        }

        let mut feat = x.clone();
        let mut block_ctx = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (y, conv) = block.conv.forward(&feat)?;
            let (y, bn) = block.bn.forward(&y, mode)?;
            let (y, relu) = relu(&y);
            let (y, pool) = maxpool1d_forward(&y, POOL_SIZE)?;
            block_ctx.push(BlockCtx { conv, bn, relu, pool });
            feat = y;
        }
        let fs = feat.shape();
        let feature_shape = [fs[0], fs[1], fs[2]];
        let [_, channels, time] = feature_shape;

        let mut rec_ctx = Vec::new();
        let mut drop_ctx = Vec::new();
        let head_in = match &self.recurrent {
            RecurrentStack::None => feat.into_shape(&[batch, channels * time])?,
            stack => {
                let mut seq = Tensor::new(vec![batch, time, channels], swap_last_axes(feat.data(), batch, channels, time))?;
                let stateful = self.spec.kind.is_stateful();
                let carried = if stateful { std::mem::take(&mut self.state) } else { Vec::new() };
                let mut next_state = Vec::new();
                let n_layers = match stack {
                    RecurrentStack::Lstm(l) => l.len(),
                    RecurrentStack::Rnn(l) => l.len(),
                    RecurrentStack::None => 0,
                };
                for li in 0..n_layers {
                    if li > 0 {
                        let (y, d) = self.dropout.forward(&seq, mode, rng.as_deref_mut())?;
                        drop_ctx.push(d);
                        seq = y;
                    }
                    let init = carried.get(li);
                    match stack {
                        RecurrentStack::Lstm(layers) => {
                            let (hs, h_t, c_t, ctx) = layers[li].forward_sequence(
                                &seq,
                                init.map(|s| &s.h),
                                init.and_then(|s| s.c.as_ref()),
                            )?;
                            rec_ctx.push(RecCtx::Lstm(ctx));
                            next_state.push(LayerState { h: h_t, c: Some(c_t) });
                            seq = hs;
                        }
                        RecurrentStack::Rnn(layers) => {
                            let (hs, h_t, ctx) = layers[li].forward_sequence(&seq, init.map(|s| &s.h))?;
                            rec_ctx.push(RecCtx::Rnn(ctx));
                            next_state.push(LayerState { h: h_t, c: None });
                            seq = hs;
                        }
                        RecurrentStack::None => unreachable!(),
                    }
                }
                if stateful {
                    self.state = next_state;
                }
                let hidden = self.spec.hidden;
                let steps = seq.shape()[1];
                let mut last = Vec::with_capacity(batch * hidden);
                for b in 0..batch {
                    let o = (b * steps + steps - 1) * hidden;
                    last.extend_from_slice(&seq.data()[o..o + hidden]);
                }
                Tensor::new(vec![batch, hidden], last)?
            }
        };
        let (y, head) = self.head.forward(&head_in)?;
        Ok((
            y,
            ForwardCache {
                blocks: block_ctx,
                feature_shape,
                recurrent: rec_ctx,
                dropouts: drop_ctx,
                head,
            },
        ))
    }

    /// Infer-mode forward without keeping the cache.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Infer, None)?.0)
    }

    /// Backpropagate `grad_y` and add every parameter gradient into its `grad`.
    /// Carried recurrent state is treated as a constant.
    pub fn backward(&mut self, cache: ForwardCache, grad_y: &Tensor) -> Result<()> {
        let ForwardCache {
            blocks: block_ctx,
            feature_shape,
            recurrent: rec_ctx,
            mut dropouts,
            head,
        } = cache;
        let [batch, channels, time] = feature_shape;

        let hg = self.head.backward(head, grad_y)?;
        self.head.weight.accumulate(&hg.grad_weight)?;
        self.head.bias.accumulate(&hg.grad_bias)?;

        let mut grad_feat = match &mut self.recurrent {
            RecurrentStack::None => hg.grad_x.into_shape(&[batch, channels, time])?,
            stack => {
                let hidden = self.spec.hidden;
                let mut grad_seq = Tensor::zeros(&[batch, time, hidden]);
                for b in 0..batch {
                    let o = (b * time + time - 1) * hidden;
                    grad_seq.data_mut()[o..o + hidden].copy_from_slice(&hg.grad_x.data()[b * hidden..(b + 1) * hidden]);
                }
                for (li, ctx) in rec_ctx.into_iter().enumerate().rev() {
                    let grad_in = match (stack as &mut RecurrentStack, ctx) {
                        (RecurrentStack::Lstm(layers), RecCtx::Lstm(ctx)) => {
                            let layer = &mut layers[li];
                            let g = layer.backward_sequence(ctx, &grad_seq, None, None)?;
                            layer.w.accumulate(&g.params.w)?;
                            layer.u.accumulate(&g.params.u)?;
                            layer.b.accumulate(&g.params.b)?;
                            g.grad_xs
                        }
                        (RecurrentStack::Rnn(layers), RecCtx::Rnn(ctx)) => {
                            let layer = &mut layers[li];
                            let g = layer.backward_sequence(ctx, &grad_seq, None)?;
                            layer.w.accumulate(&g.params.w)?;
                            layer.u.accumulate(&g.params.u)?;
                            layer.b.accumulate(&g.params.b)?;
                            g.grad_xs
                        }
                        _ => return Err(Error::Contract("forward cache does not match recurrent stack".into())),
                    };
                    grad_seq = if li > 0 {
                        let d = dropouts.pop().ok_or_else(|| Error::Contract("missing dropout context".into()))?;
                        self.dropout.backward(d, &grad_in)?
                    } else {
                        grad_in
                    };
                }
                Tensor::new(vec![batch, channels, time], swap_last_axes(grad_seq.data(), batch, time, channels))?
            }
        };

        for (block, ctx) in self.blocks.iter_mut().zip(block_ctx).rev() {
            let g = maxpool1d_backward(ctx.pool, &grad_feat)?;
            let g = relu_backward(ctx.relu, &g)?;
            let bg = block.bn.backward(ctx.bn, &g)?;
            block.bn.gamma.accumulate(&bg.grad_gamma)?;
            block.bn.beta.accumulate(&bg.grad_beta)?;
            let cg = block.conv.backward(ctx.conv, &bg.grad_x)?;
            block.conv.kernels.accumulate(&cg.grad_kernels)?;
            block.conv.bias.accumulate(&cg.grad_bias)?;
            grad_feat = cg.grad_x;
        }
        Ok(())
    }

    /// Learnable parameters in a fixed order with stable names.
    pub fn params(&self) -> Vec<(String, &ParamTensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{i}.kernels"), &b.conv.kernels));
            out.push((format!("conv{i}.bias"), &b.conv.bias));
            out.push((format!("conv{i}.bn.gamma"), &b.bn.gamma));
            out.push((format!("conv{i}.bn.beta"), &b.bn.beta));
        }
        match &self.recurrent {
            RecurrentStack::None => {}
            RecurrentStack::Lstm(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    out.push((format!("lstm{i}.w"), &l.w));
                    out.push((format!("lstm{i}.u"), &l.u));
                    out.push((format!("lstm{i}.b"), &l.b));
                }
            }
            RecurrentStack::Rnn(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    out.push((format!("rnn{i}.w"), &l.w));
                    out.push((format!("rnn{i}.u"), &l.u));
                    out.push((format!("rnn{i}.b"), &l.b));
                }
            }
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.kernels);
            out.push(&mut b.conv.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        match &mut self.recurrent {
            RecurrentStack::None => {}
            RecurrentStack::Lstm(layers) => {
                for l in layers {
                    out.extend([&mut l.w, &mut l.u, &mut l.b]);
                }
            }
            RecurrentStack::Rnn(layers) => {
                for l in layers {
                    out.extend([&mut l.w, &mut l.u, &mut l.b]);
                }
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Non-learnable tensors needed for inference (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{i}.bn.running_mean"), &b.bn.running_mean));
            out.push((format!("conv{i}.bn.running_var"), &b.bn.running_var));
        }
        out
    }

    /// Every tensor a saved model must carry: params followed by buffers.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self.params().into_iter().map(|(n, p)| (n, &p.value)).collect();
        out.extend(self.buffers());
        out
    }

    /// Replace the tensor called `name`, which must keep its shape.
    pub fn set_named_tensor(&mut self, name: &str, value: Tensor) -> Result<()> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let pos = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::CorruptModel(format!("unknown tensor '{name}'")))?;
        let n_params = self.params().len();
        let slot: &mut Tensor = if pos < n_params {
            &mut self.params_mut().into_iter().nth(pos).expect("index in range").value
        } else {
            let k = pos - n_params;
            let block = &mut self.blocks[k / 2].bn;
            if k % 2 == 0 {
                &mut block.running_mean
            } else {
                &mut block.running_var
            }
        };
        if slot.shape() != value.shape() {
            return Err(Error::CorruptModel(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Force every learnable parameter to zero.
    pub fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.value.fill(0.0);
        }
    }
}
