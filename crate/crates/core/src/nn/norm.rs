//! Batch normalization over the channel axis of [N,C,H,W].

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Element, Tensor};

/// Variance floor; keeps zero-variance channels away from division by zero.
pub const BN_EPS: f64 = 1e-5;
/// Exponential-moving-average momentum for running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::full(&[channels], T::one()).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, record: bool) -> Result<Tensor<T>> {
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::invalid(format!("batchnorm expects 4-d, got {:?}", x.shape())));
        };
        if c != self.channels() {
            return Err(Error::shape("batchnorm channels", &[self.channels()], &[c]));
        }
        let m = n * h * w;
        if mode == Mode::Train && m < 2 {
            return Err(Error::invalid(
                "batchnorm train mode needs at least 2 values per channel",
            ));
        }
        let plane = h * w;
        let eps = T::from_f64(BN_EPS);
        let mut out = Tensor::zeros(x.shape());
        let mut normalized = Tensor::zeros(x.shape());
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = T::zero();
                    let mut sq = T::zero();
                    for s in 0..n {
                        let base = (s * c + ch) * plane;
                        for &v in &x.data()[base..base + plane] {
                            sum = sum + v;
                            sq = sq + v * v;
                        }
                    }
                    let mf = T::from_f64(m as f64);
                    let mean = sum / mf;
                    let var = (sq / mf - mean * mean).max(T::zero());
                    let mom = T::from_f64(BN_MOMENTUM);
                    let one_m = T::from_f64(1.0 - BN_MOMENTUM);
                    self.running_mean.data_mut()[ch] =
                        mom * self.running_mean.data()[ch] + one_m * mean;
                    self.running_var.data_mut()[ch] =
                        mom * self.running_var.data()[ch] + one_m * var;
                    (mean, var)
                }
                Mode::Infer => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            let istd = T::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            let g = self.gamma.data()[ch];
            let b = self.beta.data()[ch];
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let xn = (x.data()[i] - mean) * istd;
                    normalized.data_mut()[i] = xn;
                    out.data_mut()[i] = g * xn + b;
                }
            }
        }
        if record && mode == Mode::Train {
            self.cache = Some(BnCache { normalized, inv_std });
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let BnCache { normalized, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::NoForwardPass("batchnorm backward".into()))?;
        let &[n, c, h, w] = normalized.shape() else { unreachable!() };
        let plane = h * w;
        let m = T::from_f64((n * plane) as f64);
        let mut grad_in = Tensor::zeros(normalized.shape());
        let mut grad_gamma = vec![T::zero(); c];
        let mut grad_beta = vec![T::zero(); c];
        for ch in 0..c {
            let g = self.gamma.data()[ch];
            let mut sum_dy = T::zero();
            let mut sum_dy_xn = T::zero();
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let dy = grad_out.data()[i];
                    sum_dy = sum_dy + dy;
                    sum_dy_xn = sum_dy_xn + dy * normalized.data()[i];
                }
            }
            grad_beta[ch] = sum_dy;
            grad_gamma[ch] = sum_dy_xn;
            let scale = g * inv_std[ch] / m;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let dy = grad_out.data()[i];
                    grad_in.data_mut()[i] =
                        scale * (m * dy - sum_dy - normalized.data()[i] * sum_dy_xn);
                }
            }
        }
        self.gamma.accumulate_grad(&grad_gamma);
        self.beta.accumulate_grad(&grad_beta);
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(
            &[2, 3, 4, 4],
            (0..96).map(|_| rng.gen_range(-4.0f32..4.0)).collect(),
        )
        .unwrap();
        let mut bn = BatchNorm2d::<f32>::new(3);
        let y = bn.forward(&x, Mode::Train, false).unwrap();
        for ch in 0..3 {
            let mut vals = Vec::new();
            for s in 0..2 {
                let base = (s * 3 + ch) * 16;
                vals.extend_from_slice(&y.data()[base..base + 16]);
            }
            let mean: f32 = vals.iter().sum::<f32>() / vals.len() as f32;
            let var: f32 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / vals.len() as f32;
            assert!(mean.abs() < 1e-4, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
    }

    #[test]
    fn infer_with_unit_stats_is_near_identity() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![0.5f32, -1.0, 2.0, 0.0]).unwrap();
        let mut bn = BatchNorm2d::<f32>::new(1);
        let y = bn.forward(&x, Mode::Infer, false).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            // identity up to the 1e-5 variance floor
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn matches_direct_statistics_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::new(
            &[3, 2, 3, 3],
            (0..54).map(|_| rng.gen_range(-2.0f32..2.0)).collect(),
        )
        .unwrap();
        let mut bn = BatchNorm2d::<f32>::new(2);
        bn.gamma.data_mut().copy_from_slice(&[1.5, 0.5]);
        bn.beta.data_mut().copy_from_slice(&[-0.25, 0.75]);
        let y = bn.forward(&x, Mode::Train, false).unwrap();
        for ch in 0..2 {
            let mut vals = Vec::new();
            for s in 0..3 {
                let base = (s * 2 + ch) * 9;
                vals.extend_from_slice(&x.data()[base..base + 9]);
            }
            let mean: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
                / vals.len() as f64;
            let istd = 1.0 / (var + BN_EPS).sqrt();
            let (g, b) = (bn.gamma.data()[ch] as f64, bn.beta.data()[ch] as f64);
            let mut i = 0;
            for s in 0..3 {
                let base = (s * 2 + ch) * 9;
                for k in 0..9 {
                    let expect = g * (vals[i] as f64 - mean) * istd + b;
                    assert!((y.data()[base + k] as f64 - expect).abs() < 1e-5);
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn zero_variance_channel_stays_finite() {
        let x = Tensor::full(&[1, 1, 4, 4], 2.0f32);
        let mut bn = BatchNorm2d::<f32>::new(1);
        let y = bn.forward(&x, Mode::Train, false).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
    }
}
