use crate::param::ParamTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update from `p.grad`, which is then zeroed.
pub fn adam_step(p: &mut ParamTensor, cfg: &AdamConfig) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let value = p.value.data_mut();
    let grad = p.grad.data_mut();
    let m = p.adam_m.data_mut();
    let v = p.adam_v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        grad[i] = 0.0;
    }
}

pub fn global_grad_norm<'a>(params: impl IntoIterator<Item = &'a ParamTensor>) -> f64 {
    params.into_iter().map(|p| p.grad.squared_norm()).sum::<f64>().sqrt()
}

/// Rescale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut ParamTensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params.iter().map(|p| &**p));
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}
