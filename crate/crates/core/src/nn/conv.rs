//! 2-D convolution (cross-correlation, stride 1) via im2col and GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

fn out_extent(input: usize, k: usize, padding: usize) -> usize {
    input + 2 * padding - k + 1
}

/// Unpack one sample [C,H,W] into patch columns [C*k*k, Ho*Wo].
fn im2col<T: Element>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    cols: &mut [T],
) {
    let ho = out_extent(h, k, padding);
    let wo = out_extent(w, k, padding);
    let plane = h * w;
    let out_plane = ho * wo;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k * k + ki * k + kj) * out_plane;
                // the in-bounds span of ox for this kernel column
                let ox_lo = padding.saturating_sub(kj);
                let ox_hi = (w + padding - kj).min(wo);
                for oy in 0..ho {
                    let iy = oy + ki;
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    if iy < padding || iy >= h + padding || ox_lo >= ox_hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_base = c * plane + (iy - padding) * w + (ox_lo + kj - padding);
                    dst[..ox_lo].fill(T::zero());
                    dst[ox_lo..ox_hi].copy_from_slice(&x[src_base..src_base + (ox_hi - ox_lo)]);
                    dst[ox_hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Scatter-add patch columns back into a sample gradient [C,H,W].
fn col2im<T: Element>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    x_grad: &mut [T],
) {
    let ho = out_extent(h, k, padding);
    let wo = out_extent(w, k, padding);
    let plane = h * w;
    let out_plane = ho * wo;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k * k + ki * k + kj) * out_plane;
                let ox_lo = padding.saturating_sub(kj);
                let ox_hi = (w + padding - kj).min(wo);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = oy + ki;
                    if iy < padding || iy >= h + padding {
                        continue;
                    }
                    let src = &cols[row + oy * wo + ox_lo..row + oy * wo + ox_hi];
                    let dst_base = c * plane + (iy - padding) * w + (ox_lo + kj - padding);
                    for (d, s) in x_grad[dst_base..dst_base + src.len()].iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let &[n, c_in, h, w] = input.shape() else {
        return Err(Error::invalid(format!(
            "conv2d input must be 4-d, got {:?}",
            input.shape()
        )));
    };
    let &[c_out, kc_in, k, k2] = kernels.shape() else {
        return Err(Error::invalid(format!(
            "conv2d kernels must be 4-d, got {:?}",
            kernels.shape()
        )));
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::invalid(format!("kernel must be square and odd, got {k}x{k2}")));
    }
    if kc_in != c_in {
        return Err(Error::shape("conv2d input channels", kernels.shape(), input.shape()));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape("conv2d bias", &[c_out], bias.shape()));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::invalid(format!(
            "input {h}x{w} too small for kernel {k} with padding {padding}"
        )));
    }
    Ok((n, c_in, h, w, c_out, k))
}

/// Batched cross-correlation forward: [N,Cin,H,W] -> [N,Cout,Ho,Wo].
pub fn conv2d_batched<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c_in, h, w, c_out, k) = check_conv_shapes(input, kernels, bias, padding)?;
    let ho = out_extent(h, k, padding);
    let wo = out_extent(w, k, padding);
    let patch = c_in * k * k;
    let mut cols = vec![T::zero(); patch * ho * wo];
    let mut out = Tensor::zeros(&[n, c_out, ho, wo]);
    let w_mat = ArrayView2::from_shape((c_out, patch), kernels.data()).unwrap();
    for s in 0..n {
        im2col(
            &input.data()[s * c_in * h * w..(s + 1) * c_in * h * w],
            c_in,
            h,
            w,
            k,
            padding,
            &mut cols,
        );
        let cols_v = ArrayView2::from_shape((patch, ho * wo), &cols[..]).unwrap();
        let out_slice = &mut out.data_mut()[s * c_out * ho * wo..(s + 1) * c_out * ho * wo];
        let mut out_v = ArrayViewMut2::from_shape((c_out, ho * wo), out_slice).unwrap();
        general_mat_mul(T::one(), &w_mat, &cols_v, T::zero(), &mut out_v);
        for c in 0..c_out {
            let b = bias.data()[c];
            for v in &mut out_slice[c * ho * wo..(c + 1) * ho * wo] {
                *v = *v + b;
            }
        }
    }
    Ok(out)
}

/// Single-sample convolution per the layer contract: [Cin,H,W] -> [Cout,Ho,Wo].
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::invalid(format!(
            "conv2d input must be 3-d, got {:?}",
            input.shape()
        )));
    };
    let batched = Tensor::new(&[1, c, h, w], input.data().to_vec())?;
    let out = conv2d_batched(&batched, kernels, bias, padding)?;
    let s = out.shape()[1..].to_vec();
    out.reshaped(&s)
}

/// Trainable convolution layer with cached input for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv2d<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Element> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, padding: usize) -> Self {
        Conv2d {
            weight: weight.with_grad(),
            bias: bias.with_grad(),
            padding,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, record: bool) -> Result<Tensor<T>> {
        let out = conv2d_batched(x, &self.weight, &self.bias, self.padding)?;
        if record {
            self.cache = Some(x.clone());
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::NoForwardPass("conv2d backward".into()))?;
        let &[n, c_in, h, w] = x.shape() else { unreachable!() };
        let &[c_out, _, k, _] = self.weight.shape() else { unreachable!() };
        let ho = out_extent(h, k, self.padding);
        let wo = out_extent(w, k, self.padding);
        if grad_out.shape() != [n, c_out, ho, wo] {
            return Err(Error::shape("conv2d grad_out", &[n, c_out, ho, wo], grad_out.shape()));
        }
        let patch = c_in * k * k;
        let mut cols = vec![T::zero(); patch * ho * wo];
        let mut grad_cols = vec![T::zero(); patch * ho * wo];
        let mut grad_w = vec![T::zero(); self.weight.numel()];
        let mut grad_b = vec![T::zero(); c_out];
        let mut grad_x = Tensor::zeros(x.shape());
        let w_mat = ArrayView2::from_shape((c_out, patch), self.weight.data()).unwrap();
        for s in 0..n {
            im2col(
                &x.data()[s * c_in * h * w..(s + 1) * c_in * h * w],
                c_in,
                h,
                w,
                k,
                self.padding,
                &mut cols,
            );
            let cols_v = ArrayView2::from_shape((patch, ho * wo), &cols[..]).unwrap();
            let go = &grad_out.data()[s * c_out * ho * wo..(s + 1) * c_out * ho * wo];
            let go_v = ArrayView2::from_shape((c_out, ho * wo), go).unwrap();
            // dW += dY . colsᵀ
            let mut gw_v = ArrayViewMut2::from_shape((c_out, patch), &mut grad_w[..]).unwrap();
            general_mat_mul(T::one(), &go_v, &cols_v.t(), T::one(), &mut gw_v);
            // dX = Wᵀ . dY, scattered back through col2im
            let mut gc_v = ArrayViewMut2::from_shape((patch, ho * wo), &mut grad_cols[..]).unwrap();
            general_mat_mul(T::one(), &w_mat.t(), &go_v, T::zero(), &mut gc_v);
            col2im(
                &grad_cols,
                c_in,
                h,
                w,
                k,
                self.padding,
                &mut grad_x.data_mut()[s * c_in * h * w..(s + 1) * c_in * h * w],
            );
            for c in 0..c_out {
                grad_b[c] = grad_b[c] + go[c * ho * wo..(c + 1) * ho * wo].iter().copied().sum();
            }
        }
        self.weight.accumulate_grad(&grad_w);
        self.bias.accumulate_grad(&grad_b);
        Ok(grad_x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive quadruple-loop cross-correlation over one sample.
    fn naive_conv(
        x: &Tensor<f32>,
        kern: &Tensor<f32>,
        bias: &Tensor<f32>,
        padding: usize,
    ) -> Tensor<f32> {
        let &[c_in, h, w] = x.shape() else { panic!() };
        let &[c_out, _, k, _] = kern.shape() else { panic!() };
        let ho = h + 2 * padding - k + 1;
        let wo = w + 2 * padding - k + 1;
        let mut out = Tensor::zeros(&[c_out, ho, wo]);
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.data()[co];
                    for ci in 0..c_in {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = oy + ki;
                                let ix = ox + kj;
                                if iy < padding || ix < padding {
                                    continue;
                                }
                                let (iy, ix) = (iy - padding, ix - padding);
                                if iy >= h || ix >= w {
                                    continue;
                                }
                                acc += x.data()[ci * h * w + iy * w + ix]
                                    * kern.data()[((co * c_in + ci) * k + ki) * k + kj];
                            }
                        }
                    }
                    out.data_mut()[co * ho * wo + oy * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, &b, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn box_sum_on_ones() {
        let x = Tensor::full(&[1, 3, 3], 1.0f32);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0f32);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, &b, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data()[4], 9.0); // center
        assert_eq!(y.data()[0], 4.0); // corner
    }

    #[test]
    fn matches_naive_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::new(&[2, 5, 5], (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let k = Tensor::new(&[3, 2, 3, 3], (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        for padding in [0, 1] {
            let fast = conv2d(&x, &k, &b, padding).unwrap();
            let slow = naive_conv(&x, &k, &b, padding);
            assert_eq!(fast.shape(), slow.shape());
            for (a, o) in fast.data().iter().zip(slow.data()) {
                assert!((a - o).abs() < 1e-5, "{a} vs {o}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_structured_error() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let err = conv2d(&x, &k, &b, 1).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn linearity_with_bias_disabled() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f32> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f32> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[2, 4, 4], xs.clone()).unwrap();
        let y = Tensor::new(&[2, 4, 4], ys.clone()).unwrap();
        let (a, bcoef) = (1.7f32, -0.4f32);
        let mix = Tensor::new(
            &[2, 4, 4],
            xs.iter().zip(&ys).map(|(u, v)| a * u + bcoef * v).collect(),
        )
        .unwrap();
        let k = Tensor::new(&[2, 2, 3, 3], (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let zb = Tensor::zeros(&[2]);
        let cm = conv2d(&mix, &k, &zb, 1).unwrap();
        let cx = conv2d(&x, &k, &zb, 1).unwrap();
        let cy = conv2d(&y, &k, &zb, 1).unwrap();
        for i in 0..cm.numel() {
            let lin = a * cx.data()[i] + bcoef * cy.data()[i];
            assert!((cm.data()[i] - lin).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_twice_errors() {
        let mut layer = Conv2d::new(Tensor::full(&[1, 1, 3, 3], 0.5f32), Tensor::zeros(&[1]), 1);
        let x = Tensor::full(&[1, 1, 4, 4], 1.0f32);
        let y = layer.forward(&x, true).unwrap();
        let g = Tensor::full(y.shape(), 1.0f32);
        layer.backward(&g).unwrap();
        assert!(matches!(layer.backward(&g), Err(Error::NoForwardPass(_))));
    }
}
