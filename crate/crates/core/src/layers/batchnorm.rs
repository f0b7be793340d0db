use crate::error::{Error, Result};
use crate::param::ParamTensor;
use crate::tensor::Tensor;

use super::Mode;

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `(batch, time)` of a `[batch, ch, time]` map.
///
/// Training normalizes with the biased (divide-by-N) batch variance and folds
/// the batch mean and variance into the running estimates with
/// `running = (1 - momentum) * running + momentum * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormContext {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 3],
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub grad_x: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, DEFAULT_MOMENTUM, DEFAULT_EPS).expect("default constants are valid")
    }

    pub fn with_params(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Parameter(format!("batchnorm momentum {momentum} not in (0, 1)")));
        }
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("batchnorm eps {eps} must be positive")));
        }
        Ok(Self {
            gamma: Tensor::filled(&[channels], 1.0).into(),
            beta: Tensor::zeros(&[channels]).into(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum,
            eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormContext)> {
        let ch = self.channels();
        if x.rank() != 3 || x.shape()[1] != ch {
            return Err(Error::Dimension(format!(
                "batchnorm expects [batch, {ch}, time], got {:?}",
                x.shape()
            )));
        }
        let (batch, len) = (x.shape()[0], x.shape()[2]);
        let n = batch * len;
        let xd = x.data();
        let idx = |b: usize, c: usize| (b * ch + c) * len;

        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "batchnorm training needs at least 2 values per channel, got {n}"
                    )));
                }
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let s: f64 = (0..batch).map(|b| xd[idx(b, c)..idx(b, c) + len].iter().sum::<f64>()).sum();
                    let m = s / n as f64;
                    let ss: f64 = (0..batch)
                        .map(|b| xd[idx(b, c)..idx(b, c) + len].iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                        .sum();
                    mean[c] = m;
                    var[c] = ss / n as f64;
                }
                let mo = self.momentum;
                for c in 0..ch {
                    let rm = &mut self.running_mean.data_mut()[c];
                    *rm = (1.0 - mo) * *rm + mo * mean[c];
                    let rv = &mut self.running_var.data_mut()[c];
                    *rv = (1.0 - mo) * *rv + mo * var[c];
                }
                (mean, var)
            }
            Mode::Infer => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut x_hat = vec![0.0; x.len()];
        let mut y = Tensor::zeros(x.shape());
        let yd = y.data_mut();
        for b in 0..batch {
            for c in 0..ch {
                let o = idx(b, c);
                for t in 0..len {
                    let h = (xd[o + t] - mean[c]) * inv_std[c];
                    x_hat[o + t] = h;
                    yd[o + t] = gamma[c] * h + beta[c];
                }
            }
        }
        y.ensure_finite("batchnorm forward")?;
        Ok((
            y,
            BatchNormContext {
                x_hat,
                inv_std,
                shape: [batch, ch, len],
                mode,
            },
        ))
    }

    pub fn backward(&self, ctx: BatchNormContext, grad_out: &Tensor) -> Result<BatchNormGrads> {
        let [batch, ch, len] = ctx.shape;
        if ch != self.channels() || grad_out.shape() != ctx.shape {
            return Err(Error::Contract(format!(
                "batchnorm backward: context shape {:?}, grad {:?}, layer channels {}",
                ctx.shape,
                grad_out.shape(),
                self.channels()
            )));
        }
        let n = (batch * len) as f64;
        let gd = grad_out.data();
        let gamma = self.gamma.value.data();
        let idx = |b: usize, c: usize| (b * ch + c) * len;

        let mut grad_gamma = Tensor::zeros(&[ch]);
        let mut grad_beta = Tensor::zeros(&[ch]);
        for c in 0..ch {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for b in 0..batch {
                let o = idx(b, c);
                for t in 0..len {
                    sg += gd[o + t];
                    sgx += gd[o + t] * ctx.x_hat[o + t];
                }
            }
            grad_beta.data_mut()[c] = sg;
            grad_gamma.data_mut()[c] = sgx;
        }

        let mut grad_x = Tensor::zeros(grad_out.shape());
        let gx = grad_x.data_mut();
        for c in 0..ch {
            let scale = gamma[c] * ctx.inv_std[c];
            let (sg, sgx) = (grad_beta.data()[c], grad_gamma.data()[c]);
            for b in 0..batch {
                let o = idx(b, c);
                for t in 0..len {
                    gx[o + t] = match ctx.mode {
                        Mode::Infer => scale * gd[o + t],
                        Mode::Train => scale * (gd[o + t] - sg / n - ctx.x_hat[o + t] * sgx / n),
                    };
                }
            }
        }
        Ok(BatchNormGrads {
            grad_x,
            grad_gamma,
            grad_beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, compare, DEFAULT_ABS_FLOOR, DEFAULT_REL_TOL, DEFAULT_STEP};
    use crate::layers::testutil::{dim, project, rand_tensor};
    use crate::rng::RngStream;

    #[test]
    fn constant_input_maps_to_beta() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::filled(&[3, 2, 4], 7.0);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        bn.gamma.value = Tensor::filled(&[2], 2.0);
        bn.beta.value = Tensor::filled(&[2], 1.0);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_values_normalize_to_unit() {
        let mut bn = BatchNorm::with_params(1, 0.1, 1e-300).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_update_and_infer_is_readonly() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        // mean 2, biased var 1
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-15);
        let before = bn.clone();
        let (y, _) = bn.forward(&x, Mode::Infer).unwrap();
        assert_eq!(bn, before);
        let expected = (1.0 - 0.2) / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn single_value_batch_is_degenerate() {
        let mut bn = BatchNorm::new(3);
        assert!(matches!(
            bn.forward(&Tensor::zeros(&[1, 3, 1]), Mode::Train),
            Err(Error::DegenerateBatch(_))
        ));
        assert!(bn.forward(&Tensor::zeros(&[1, 3, 1]), Mode::Infer).is_ok());
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = RngStream::new(4);
        let mut bn = BatchNorm::new(3);
        let x = rand_tensor(&[4, 3, 5], &mut rng).mul(10.0).unwrap().add(3.0).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| (0..5).map(move |t| (b, t))).map(|(b, t)| y.get(&[b, c, t]).unwrap()).collect();
            let m = vals.iter().sum::<f64>() / 20.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_cotangent() {
        let mut rng = RngStream::new(5);
        let mut bn = BatchNorm::new(2);
        let (_, ctx) = bn.forward(&rand_tensor(&[2, 2, 3], &mut rng), Mode::Train).unwrap();
        let g = bn.backward(ctx, &Tensor::zeros(&[2, 2, 3])).unwrap();
        for t in [&g.grad_x, &g.grad_gamma, &g.grad_beta] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    fn check(mode: Mode, seed: u64) {
        let mut rng = RngStream::new(seed);
        for _ in 0..20 {
            let (b, c, t) = (dim(&mut rng, 3), dim(&mut rng, 4), dim(&mut rng, 5));
            let (b, t) = if b * t < 2 { (2, t) } else { (b, t) };
            let mut bn = BatchNorm::new(c);
            bn.gamma.value = rand_tensor(&[c], &mut rng);
            bn.beta.value = rand_tensor(&[c], &mut rng);
            bn.running_mean = rand_tensor(&[c], &mut rng);
            bn.running_var = Tensor::from_fn(&[c], |_| rng.uniform_range(0.5, 2.0));
            let x = rand_tensor(&[b, c, t], &mut rng);
            let w = rand_tensor(&[b, c, t], &mut rng);
            let (_, ctx) = bn.clone().forward(&x, mode).unwrap();
            let g = bn.backward(ctx, &w).unwrap();

            let eval = |layer: &BatchNorm, x: &Tensor| project(&layer.clone().forward(x, mode).unwrap().0, &w);
            let nx = gradcheck::central_difference_tensor(&x, |xp| eval(&bn, xp), DEFAULT_STEP);
            let ng = gradcheck::central_difference_tensor(&bn.gamma.value, |p| {
                let mut l = bn.clone();
                l.gamma.value = p.clone();
                eval(&l, &x)
            }, DEFAULT_STEP);
            let nb = gradcheck::central_difference_tensor(&bn.beta.value, |p| {
                let mut l = bn.clone();
                l.beta.value = p.clone();
                eval(&l, &x)
            }, DEFAULT_STEP);
            for (a, n) in [(&g.grad_x, &nx), (&g.grad_gamma, &ng), (&g.grad_beta, &nb)] {
                let cmp = compare(a.data(), n.data(), DEFAULT_REL_TOL, DEFAULT_ABS_FLOOR);
                assert!(cmp.passed, "{mode:?} {cmp:?}");
            }
        }
    }

    #[test]
    fn gradcheck_train_mode() {
        check(Mode::Train, 21);
    }

    #[test]
    fn gradcheck_infer_mode() {
        check(Mode::Infer, 22);
    }
}
