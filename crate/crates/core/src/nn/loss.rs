//! Two-class per-pixel softmax cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Per-pixel 2-class softmax over the class axis of [N,2,H,W],
/// stabilized by max-subtraction.
pub fn softmax_probs<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = logits.shape() else {
        return Err(Error::invalid(format!(
            "softmax expects 4-d logits, got {:?}",
            logits.shape()
        )));
    };
    if c != 2 {
        return Err(Error::shape("softmax class axis", &[2], &[c]));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(logits.shape());
    for s in 0..n {
        let b0 = (s * 2) * plane;
        let b1 = (s * 2 + 1) * plane;
        for i in 0..plane {
            let (a, b) = (logits.data()[b0 + i], logits.data()[b1 + i]);
            let m = a.max(b);
            let ea = (a - m).exp();
            let eb = (b - m).exp();
            let z = ea + eb;
            out.data_mut()[b0 + i] = ea / z;
            out.data_mut()[b1 + i] = eb / z;
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood over all pixels; `target[i] == true` marks
/// the vessel class (channel 1). Returns the loss and the logits gradient.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    target: &[bool],
) -> Result<(T, Tensor<T>)> {
    let &[n, _, h, w] = logits.shape() else {
        return Err(Error::invalid(format!(
            "cross-entropy expects 4-d logits, got {:?}",
            logits.shape()
        )));
    };
    let plane = h * w;
    if target.len() != n * plane {
        return Err(Error::shape("cross-entropy target", &[n * plane], &[target.len()]));
    }
    let probs = softmax_probs(logits)?;
    let total = T::from_f64((n * plane) as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    let tiny = T::from_f64(1e-30);
    for s in 0..n {
        let b0 = (s * 2) * plane;
        let b1 = (s * 2 + 1) * plane;
        for i in 0..plane {
            let vessel = target[s * plane + i];
            let (p0, p1) = (probs.data()[b0 + i], probs.data()[b1 + i]);
            let p_true = if vessel { p1 } else { p0 };
            loss = loss - (p_true + tiny).ln();
            let (t0, t1) = if vessel {
                (T::zero(), T::one())
            } else {
                (T::one(), T::zero())
            };
            grad.data_mut()[b0 + i] = (p0 - t0) / total;
            grad.data_mut()[b1 + i] = (p1 - t1) / total;
        }
    }
    Ok((loss / total, grad))
}
