//! Rectifier capped at 6 (ReLU-6).

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Elementwise min(max(x, 0), 6).
pub fn relu6<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64(6.0);
    x.map(|v| v.max(T::zero()).min(six))
}

/// Gradient is 1 strictly inside (0, 6), 0 elsewhere.
pub fn relu6_backward<T: Element>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64(6.0);
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() && v < six { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data).unwrap()
}

#[derive(Debug, Clone, Default)]
pub struct Relu6<T = f32> {
    cache: Option<Tensor<T>>,
}

impl<T: Element> Relu6<T> {
    pub fn new() -> Self {
        Relu6 { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, record: bool) -> Tensor<T> {
        if record {
            self.cache = Some(x.clone());
        }
        relu6(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::NoForwardPass("relu6 backward".into()))?;
        Ok(relu6_backward(&x, grad_out))
    }
}
