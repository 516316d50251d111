//! Adam optimizer with bias correction and configurable epsilon.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Per-run optimizer state. The epsilon sits inside the denominator
/// as sqrt(v_hat) + eps.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub step_count: u64,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(param_sizes: &[usize], learning_rate: f64, epsilon: f64) -> Self {
        AdamState {
            step_count: 0,
            learning_rate,
            epsilon,
            beta1: 0.9,
            beta2: 0.999,
            first_moment: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One optimizer step over the parameter list. Parameter order must be
    /// stable across steps; gradients are read from each tensor's grad
    /// buffer and zeroed afterwards.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor<T>)]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::invalid(format!(
                "adam state holds {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.epsilon);
        let bc1 = one - T::from_f64(self.beta1).powi(t);
        let bc2 = one - T::from_f64(self.beta2).powi(t);
        for (idx, (name, p)) in params.iter_mut().enumerate() {
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            if m.len() != p.numel() {
                return Err(Error::shape(format!("adam moments for {name}"), &[m.len()], &[p.numel()]));
            }
            let grad = p
                .grad
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("parameter {name} has no gradient")))?
                .clone();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {name}")));
            }
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let cur = p.data()[i];
                p.data_mut()[i] = cur - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(&[3], vec![1.0f32, 2.0, 3.0]).unwrap().with_grad();
        let before = p.data().to_vec();
        let mut state = AdamState::new(&[3], 0.1, 1e-8);
        state.step(&mut [("p", &mut p)]).unwrap();
        assert_eq!(p.data(), &before[..]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut p = Tensor::new(&[1], vec![0.0f32]).unwrap().with_grad();
        p.accumulate_grad(&[1.0]);
        let mut state = AdamState::new(&[1], 0.1, 1e-8);
        state.step(&mut [("p", &mut p)]).unwrap();
        // bias-corrected m_hat / sqrt(v_hat) = 1 on step one
        assert!((p.data()[0] + 0.1).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn matches_scalar_reference_sequence() {
        // f(x) = x^2, gradient 2x, five steps
        let (lr, eps, b1, b2) = (0.05f64, 1e-8f64, 0.9f64, 0.999f64);
        let mut x_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expect = Vec::new();
        for t in 1..=5 {
            let g = 2.0 * x_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            x_ref -= lr * m_hat / (v_hat.sqrt() + eps);
            expect.push(x_ref);
        }

        let mut p = Tensor::new(&[1], vec![1.0f64]).unwrap().with_grad();
        let mut state = AdamState::new(&[1], lr, eps);
        for t in 0..5 {
            let g = 2.0 * p.data()[0];
            p.zero_grad();
            p.accumulate_grad(&[g]);
            state.step(&mut [("x", &mut p)]).unwrap();
            assert!((p.data()[0] - expect[t]).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::new(&[1], vec![0.0f32]).unwrap().with_grad();
        p.accumulate_grad(&[f32::NAN]);
        let mut state = AdamState::new(&[1], 0.1, 1e-8);
        let err = state.step(&mut [("conv1.weight", &mut p)]).unwrap_err();
        assert!(err.to_string().contains("conv1.weight"));
    }

    #[test]
    fn step_magnitude_bounded_by_lr() {
        let mut p = Tensor::new(&[4], vec![0.0f32; 4]).unwrap().with_grad();
        let mut state = AdamState::new(&[4], 0.01, 1e-8);
        let mut rng_state = 12345u64;
        for _ in 0..20 {
            let grads: Vec<f32> = (0..4)
                .map(|_| {
                    rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((rng_state >> 33) as f32 / (1u64 << 31) as f32) * 4.0 - 2.0
                })
                .collect();
            let before = p.data().to_vec();
            p.zero_grad();
            p.accumulate_grad(&grads);
            state.step(&mut [("p", &mut p)]).unwrap();
            for i in 0..4 {
                assert!((p.data()[i] - before[i]).abs() <= 0.01 * 1.05);
            }
        }
    }
}
