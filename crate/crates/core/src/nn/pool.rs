//! 2x2 max pooling and 2x nearest-neighbor upsampling.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Non-overlapping 2x2 max pool over [N,C,H,W]. Returns the pooled tensor
/// and the flat argmax index of every window for gradient routing.
pub fn maxpool2<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::invalid(format!("maxpool2 expects 4-d, got {:?}", x.shape())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2 requires even spatial extents, got {h}x{w}; pad or tile the input"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = vec![0usize; n * c * ho * wo];
    for p in 0..n * c {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = (2 * oy) * w + 2 * ox;
                let mut best = plane[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if plane[idx] > best {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                let o = p * ho * wo + oy * wo + ox;
                out.data_mut()[o] = best;
                argmax[o] = p * h * w + best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Replicate every pixel of [N,C,H,W] into a 2x2 block.
pub fn upsample_nearest2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::invalid(format!(
            "upsample_nearest2 expects 4-d, got {:?}",
            x.shape()
        )));
    };
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                let v = x.data()[p * h * w + y * w + xx];
                let base = p * 4 * h * w + 2 * y * 2 * w + 2 * xx;
                out.data_mut()[base] = v;
                out.data_mut()[base + 1] = v;
                out.data_mut()[base + 2 * w] = v;
                out.data_mut()[base + 2 * w + 1] = v;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<usize>)>, // (input shape, argmax)
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { cache: None }
    }

    pub fn forward<T: Element>(&mut self, x: &Tensor<T>, record: bool) -> Result<Tensor<T>> {
        let (out, argmax) = maxpool2(x)?;
        if record {
            self.cache = Some((x.shape().to_vec(), argmax));
        }
        Ok(out)
    }

    pub fn backward<T: Element>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self
            .cache
            .take()
            .ok_or_else(|| Error::NoForwardPass("maxpool2 backward".into()))?;
        let mut grad_in = Tensor::zeros(&shape);
        for (o, &src) in argmax.iter().enumerate() {
            grad_in.data_mut()[src] = grad_in.data_mut()[src] + grad_out.data()[o];
        }
        Ok(grad_in)
    }
}

#[derive(Debug, Clone, Default)]
pub struct UpsampleNearest2 {
    in_shape: Option<Vec<usize>>,
}

impl UpsampleNearest2 {
    pub fn new() -> Self {
        UpsampleNearest2 { in_shape: None }
    }

    pub fn forward<T: Element>(&mut self, x: &Tensor<T>, record: bool) -> Result<Tensor<T>> {
        if record {
            self.in_shape = Some(x.shape().to_vec());
        }
        upsample_nearest2(x)
    }

    /// Each input pixel's gradient is the sum of its 4 descendants.
    pub fn backward<T: Element>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .in_shape
            .take()
            .ok_or_else(|| Error::NoForwardPass("upsample backward".into()))?;
        let &[n, c, h, w] = &shape[..] else { unreachable!() };
        let mut grad_in = Tensor::zeros(&shape);
        for p in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    let base = p * 4 * h * w + 2 * y * 2 * w + 2 * xx;
                    let sum = grad_out.data()[base]
                        + grad_out.data()[base + 1]
                        + grad_out.data()[base + 2 * w]
                        + grad_out.data()[base + 2 * w + 1];
                    grad_in.data_mut()[p * h * w + y * w + xx] = sum;
                }
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_single_window() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn pool_constant_stays_constant() {
        let x = Tensor::full(&[1, 2, 4, 4], 3.5f32);
        let (y, _) = maxpool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn pool_matches_window_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::new(&[1, 1, 8, 8], (0..64).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .unwrap();
        let (y, _) = maxpool2(&x).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let mut m = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[(2 * oy + dy) * 8 + 2 * ox + dx]);
                    }
                }
                assert_eq!(y.data()[oy * 4 + ox], m);
            }
        }
    }

    #[test]
    fn pool_rejects_odd_extent() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(maxpool2(&x).is_err());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![5.0f32]).unwrap();
        let y = upsample_nearest2(&x).unwrap();
        assert_eq!(y.data(), &[5.0; 4]);

        let checker = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let y = upsample_nearest2(&checker).unwrap();
        #[rustfmt::skip]
        let expect = [
            1.0, 1.0, 0.0, 0.0,
            1.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 1.0, 1.0f32,
        ];
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn upsample_backward_sums_descendants() {
        let mut layer = UpsampleNearest2::new();
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        layer.forward(&x, true).unwrap();
        let g = Tensor::full(&[1, 1, 4, 4], 1.0f32);
        let gi = layer.backward(&g).unwrap();
        assert_eq!(gi.data(), &[4.0; 4]);
    }
}
