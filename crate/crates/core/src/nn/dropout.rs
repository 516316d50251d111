//! Inverted dropout, deterministic under a caller-supplied seed.

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Train mode zeroes each element with probability `p` and scales survivors
/// by 1/(1-p); infer mode is the identity.
pub fn dropout<T: Element>(x: &Tensor<T>, p: f64, seed: u64, mode: Mode) -> Result<Tensor<T>> {
    let (out, _) = dropout_with_mask(x, p, seed, mode)?;
    Ok(out)
}

pub(crate) fn dropout_with_mask<T: Element>(
    x: &Tensor<T>,
    p: f64,
    seed: u64,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<bool>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout p must be in [0,1), got {p}")));
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::from_f64(1.0 / (1.0 - p));
    // one u32 draw per element keeps the mask independent of the element
    // type; the 2^-32 quantization of p is far below any tolerance here
    let threshold = (p * f64::from(u32::MAX)) as u32;
    let mut mask = vec![false; x.numel()];
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let keep = rng.gen::<u32>() >= threshold;
        mask[i] = keep;
        out.data_mut()[i] = if keep { x.data()[i] * scale } else { T::zero() };
    }
    Ok((out, Some(mask)))
}

#[derive(Debug, Clone)]
pub struct Dropout<T = f32> {
    pub p: f64,
    cache: Option<Option<Vec<bool>>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Dropout {
            p,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, seed: u64, mode: Mode, record: bool) -> Result<Tensor<T>> {
        let (out, mask) = dropout_with_mask(x, self.p, seed, mode)?;
        if record {
            self.cache = Some(mask);
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .cache
            .take()
            .ok_or_else(|| Error::NoForwardPass("dropout backward".into()))?;
        match mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                let scale = T::from_f64(1.0 / (1.0 - self.p));
                let data = grad_out
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&g, &keep)| if keep { g * scale } else { T::zero() })
                    .collect();
                Ok(Tensor::new(grad_out.shape(), data).unwrap())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_zero_is_identity() {
        let x = Tensor::new(&[4], vec![1.0f32, -2.0, 3.0, 4.0]).unwrap();
        let y = dropout(&x, 0.0, 1, Mode::Train).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn infer_mode_is_identity() {
        let x = Tensor::new(&[4], vec![1.0f32, -2.0, 3.0, 4.0]).unwrap();
        let y = dropout(&x, 0.9, 1, Mode::Infer).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn empirical_drop_fraction_near_p() {
        let x = Tensor::full(&[1_000_000], 1.0f32);
        let y = dropout(&x, 0.5, 42, Mode::Train).unwrap();
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count();
        let frac = dropped as f64 / 1e6;
        assert!((frac - 0.5).abs() < 0.01, "drop fraction {frac}");
        // Survivors scaled by 1/(1-p).
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn same_seed_same_mask() {
        let x = Tensor::full(&[1000], 1.0f32);
        let a = dropout(&x, 0.3, 9, Mode::Train).unwrap();
        let b = dropout(&x, 0.3, 9, Mode::Train).unwrap();
        assert_eq!(a.data(), b.data());
        let c = dropout(&x, 0.3, 10, Mode::Train).unwrap();
        assert_ne!(a.data(), c.data());
    }
}
