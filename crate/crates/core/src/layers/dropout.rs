use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::Mode;

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

pub struct DropoutContext {
    /// `None` when the forward pass was the identity.
    mask: Option<Vec<f64>>,
    len: usize,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: Option<&mut RngStream>,
    ) -> Result<(Tensor, DropoutContext)> {
        if mode == Mode::Infer || self.rate == 0.0 {
            return Ok((
                x.clone(),
                DropoutContext {
                    mask: None,
                    len: x.len(),
                },
            ));
        }
        let rng = rng.ok_or_else(|| Error::Contract("dropout in train mode needs an rng".into()))?;
        let scale = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.bernoulli(self.rate) { 0.0 } else { scale })
            .collect();
        self.forward_with_mask(x, mask)
    }

    /// Apply a caller-supplied mask (entries `0` or `1 / (1 - rate)`).
    pub fn forward_with_mask(&self, x: &Tensor, mask: Vec<f64>) -> Result<(Tensor, DropoutContext)> {
        if mask.len() != x.len() {
            return Err(Error::Dimension(format!(
                "dropout mask has {} entries for tensor {:?}",
                mask.len(),
                x.shape()
            )));
        }
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok((
            y,
            DropoutContext {
                mask: Some(mask),
                len: x.len(),
            },
        ))
    }

    pub fn backward(&self, ctx: DropoutContext, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.len() != ctx.len {
            return Err(Error::Contract(format!(
                "dropout backward: grad {:?} vs {} forward elements",
                grad_out.shape(),
                ctx.len
            )));
        }
        let mut g = grad_out.clone();
        if let Some(mask) = ctx.mask {
            for (v, m) in g.data_mut().iter_mut().zip(&mask) {
                *v *= m;
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, compare, DEFAULT_ABS_FLOOR, DEFAULT_REL_TOL, DEFAULT_STEP};
    use crate::layers::testutil::{dim, project, rand_tensor};

    #[test]
    fn rate_validation() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
        assert!(Dropout::new(0.0).is_ok());
    }

    #[test]
    fn identity_cases() {
        let mut rng = RngStream::new(1);
        let x = rand_tensor(&[3, 4], &mut rng);
        let zero = Dropout::new(0.0).unwrap();
        assert_eq!(zero.forward(&x, Mode::Train, Some(&mut rng)).unwrap().0, x);
        let d = Dropout::new(0.3).unwrap();
        let y = d.forward(&x, Mode::Infer, None).unwrap().0;
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y), bits(&x));
    }

    #[test]
    fn train_without_rng_is_contract_error() {
        let d = Dropout::new(0.3).unwrap();
        assert!(matches!(
            d.forward(&Tensor::zeros(&[2]), Mode::Train, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn inverted_scaling_preserves_mean() {
        let d = Dropout::new(0.3).unwrap();
        let mut rng = RngStream::new(2024);
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let draws = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..draws {
            let (y, _) = d.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        for (a, v) in acc.iter().zip(x.data()) {
            let mean = a / draws as f64;
            assert!((mean - v).abs() <= 0.01 * v.abs(), "{mean} vs {v}");
        }
    }

    #[test]
    fn gradcheck_fixed_mask() {
        let mut rng = RngStream::new(61);
        let d = Dropout::new(0.3).unwrap();
        for _ in 0..20 {
            let shape = [dim(&mut rng, 4), dim(&mut rng, 5)];
            let x = rand_tensor(&shape, &mut rng);
            let mask: Vec<f64> = (0..x.len()).map(|_| if rng.bernoulli(0.3) { 0.0 } else { 1.0 / 0.7 }).collect();
            let w = rand_tensor(&shape, &mut rng);
            let (_, ctx) = d.forward_with_mask(&x, mask.clone()).unwrap();
            let g = d.backward(ctx, &w).unwrap();
            let n = gradcheck::central_difference_tensor(&x, |xp| project(&d.forward_with_mask(xp, mask.clone()).unwrap().0, &w), DEFAULT_STEP);
            assert!(compare(g.data(), n.data(), DEFAULT_REL_TOL, DEFAULT_ABS_FLOOR).passed);
        }
    }
}
