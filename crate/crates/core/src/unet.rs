//! Two-class vessel-segmentation U-Net: contracting and expanding paths with
//! span connections, assembled from the neural-core layer set, plus a
//! portable binary weight file for transfer learning.

use crate::error::{Error, Result};
use crate::nn::{
    softmax_probs, AdamState, BatchNorm2d, Conv2d, Dropout, MaxPool2, Mode, Relu6,
    UpsampleNearest2,
};
use crate::raster::{GrayImage, ProbMap};
use crate::tensor::{Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Read;
use std::path::Path;

const WEIGHT_MAGIC: &[u8; 4] = b"OCTW";
const WEIGHT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnetConfig {
    /// Number of resolution levels, including the bottom level.
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_classes: usize,
    pub dropout_p: f64,
    pub kernel_size: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        UnetConfig {
            depth: 4,
            base_channels: 16,
            in_channels: 1,
            out_classes: 2,
            dropout_p: 0.5,
            kernel_size: 3,
        }
    }
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.base_channels == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::invalid("base_channels > 0 and odd kernel required"));
        }
        if self.out_classes != 2 {
            return Err(Error::invalid("this network is two-class only"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!("dropout_p {} out of [0,1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Input extents must divide by this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Ordered named parameter buffers plus batch-norm running statistics and
/// the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: UnetConfig,
    pub entries: Vec<(String, Tensor<f32>)>,
}

/// Canonical (name, shape) list for a configuration; defines both the build
/// order and the on-disk entry order.
fn layer_specs(config: &UnetConfig) -> Vec<(String, Vec<usize>)> {
    let k = config.kernel_size;
    let mut specs = Vec::new();
    let conv_block = |specs: &mut Vec<(String, Vec<usize>)>, name: String, cin: usize, cout: usize| {
        specs.push((format!("{name}.weight"), vec![cout, cin, k, k]));
        specs.push((format!("{name}.bias"), vec![cout]));
    };
    let bn_block = |specs: &mut Vec<(String, Vec<usize>)>, name: String, c: usize| {
        specs.push((format!("{name}.gamma"), vec![c]));
        specs.push((format!("{name}.beta"), vec![c]));
        specs.push((format!("{name}.running_mean"), vec![c]));
        specs.push((format!("{name}.running_var"), vec![c]));
    };
    for i in 0..config.depth {
        let cin = if i == 0 {
            config.in_channels
        } else {
            config.channels(i - 1)
        };
        let c = config.channels(i);
        conv_block(&mut specs, format!("enc{i}.conv1"), cin, c);
        bn_block(&mut specs, format!("enc{i}.bn1"), c);
        conv_block(&mut specs, format!("enc{i}.conv2"), c, c);
        bn_block(&mut specs, format!("enc{i}.bn2"), c);
    }
    for i in 0..config.depth - 1 {
        conv_block(&mut specs, format!("up{i}.conv"), config.channels(i + 1), config.channels(i));
    }
    for i in 0..config.depth - 1 {
        let c = config.channels(i);
        conv_block(&mut specs, format!("dec{i}.conv1"), 2 * c, c);
        bn_block(&mut specs, format!("dec{i}.bn1"), c);
        conv_block(&mut specs, format!("dec{i}.conv2"), c, c);
        bn_block(&mut specs, format!("dec{i}.bn2"), c);
    }
    specs.push((
        "final.weight".to_string(),
        vec![config.out_classes, config.channels(0), 1, 1],
    ));
    specs.push(("final.bias".to_string(), vec![config.out_classes]));
    specs
}

/// He fan-in random initialization of a fresh network under `seed`.
pub fn build(config: &UnetConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut entries = Vec::new();
    for (name, shape) in layer_specs(config) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if name.ends_with(".weight") && shape.len() == 4 {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = normal.sample(&mut rng);
                    (z * std) as f32
                })
                .collect()
        } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        entries.push((name, Tensor::new(&shape, data)?));
    }
    Ok(ModelWeights {
        config: *config,
        entries,
    })
}

impl ModelWeights {
    /// Number of trainable parameters (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| !n.contains("running_"))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHT_MAGIC);
        buf.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        for v in [
            self.config.depth,
            self.config.base_channels,
            self.config.in_channels,
            self.config.out_classes,
            self.config.kernel_size,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.config.dropout_p as f32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &e in tensor.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::io::write_atomic(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::WeightFormat(format!(
                    "truncated file at byte {} (wanted {n} more)",
                    *pos
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 4)?;
        if magic != WEIGHT_MAGIC {
            return Err(Error::WeightFormat(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if version != WEIGHT_VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let depth = read_u32(&mut pos)? as usize;
        let base_channels = read_u32(&mut pos)? as usize;
        let in_channels = read_u32(&mut pos)? as usize;
        let out_classes = read_u32(&mut pos)? as usize;
        let kernel_size = read_u32(&mut pos)? as usize;
        let dropout_p = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as f64;
        let config = UnetConfig {
            depth,
            base_channels,
            in_channels,
            out_classes,
            dropout_p,
            kernel_size,
        };
        config
            .validate()
            .map_err(|e| Error::WeightFormat(format!("config block: {e}")))?;
        let count = read_u32(&mut pos)? as usize;
        let specs = layer_specs(&config);
        if count != specs.len() {
            return Err(Error::WeightFormat(format!(
                "entry count {count} does not match config ({} expected)",
                specs.len()
            )));
        }
        let mut entries = Vec::with_capacity(count);
        for (expect_name, expect_shape) in &specs {
            let name_len = read_u32(&mut pos)? as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::WeightFormat("non-utf8 layer name".into()))?;
            if &name != expect_name {
                return Err(Error::WeightFormat(format!(
                    "layer mismatch: expected {expect_name}, found {name}"
                )));
            }
            let rank = read_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut pos)? as usize);
            }
            if &shape != expect_shape {
                return Err(Error::WeightFormat(format!(
                    "shape mismatch in {name}: expected {expect_shape:?}, found {shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let raw = take(&mut pos, 4 * n)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::new(&shape, data)?));
        }
        if pos != bytes.len() {
            return Err(Error::WeightFormat(format!(
                "{} trailing bytes after last entry",
                bytes.len() - pos
            )));
        }
        Ok(ModelWeights { config, entries })
    }
}

#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu6<T>,
    drop: Dropout<T>,
}

impl<T: Element> ConvBlock<T> {
    fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        seed: u64,
        record: bool,
    ) -> Result<Tensor<T>> {
        let x = self.conv.forward(x, record)?;
        let x = self.bn.forward(&x, mode, record)?;
        let x = self.relu.forward(&x, record);
        self.drop.forward(&x, seed, mode, record)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.drop.backward(grad)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }
}

#[derive(Debug, Clone)]
struct Level<T> {
    block1: ConvBlock<T>,
    block2: ConvBlock<T>,
}

impl<T: Element> Level<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64, record: bool) -> Result<Tensor<T>> {
        let x = self.block1.forward(x, mode, seed, record)?;
        self.block2.forward(&x, mode, seed.wrapping_add(1), record)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.block2.backward(grad)?;
        self.block1.backward(&g)
    }
}

/// Runtime network; generic element type so gradient verification can run
/// the same code in f64.
#[derive(Debug, Clone)]
pub struct Unet<T = f32> {
    pub config: UnetConfig,
    enc: Vec<Level<T>>,
    pools: Vec<MaxPool2>,
    upsamples: Vec<UpsampleNearest2>,
    upconvs: Vec<Conv2d<T>>,
    dec: Vec<Level<T>>,
    final_conv: Conv2d<T>,
    skips: Option<Vec<Tensor<T>>>,
}

fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, ca, h, w] = a.shape() else { unreachable!() };
    let &[n2, cb, h2, w2] = b.shape() else { unreachable!() };
    if n != n2 || h != h2 || w != w2 {
        return Err(Error::shape("concat extents", a.shape(), b.shape()));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    for s in 0..n {
        let dst = &mut out.data_mut()[s * (ca + cb) * plane..(s + 1) * (ca + cb) * plane];
        dst[..ca * plane].copy_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        dst[ca * plane..].copy_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    Ok(out)
}

fn split_channels<T: Element>(g: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let &[n, c, h, w] = g.shape() else { unreachable!() };
    let cb = c - ca;
    let plane = h * w;
    let mut a = Tensor::zeros(&[n, ca, h, w]);
    let mut b = Tensor::zeros(&[n, cb, h, w]);
    for s in 0..n {
        let src = &g.data()[s * c * plane..(s + 1) * c * plane];
        a.data_mut()[s * ca * plane..(s + 1) * ca * plane].copy_from_slice(&src[..ca * plane]);
        b.data_mut()[s * cb * plane..(s + 1) * cb * plane].copy_from_slice(&src[ca * plane..]);
    }
    (a, b)
}

impl<T: Element> Unet<T> {
    pub fn from_weights(weights: &ModelWeights) -> Result<Self> {
        let config = weights.config;
        config.validate()?;
        type EntryMap<'a> = std::collections::HashMap<&'a str, &'a Tensor<f32>>;
        let mut map: EntryMap = weights
            .entries
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        fn take<T: Element>(map: &mut EntryMap, name: String) -> Result<Tensor<T>> {
            map.remove(name.as_str())
                .map(|t| t.cast::<T>())
                .ok_or_else(|| Error::WeightFormat(format!("missing layer {name}")))
        }
        fn conv<T: Element>(map: &mut EntryMap, name: &str, padding: usize) -> Result<Conv2d<T>> {
            Ok(Conv2d::new(
                take(map, format!("{name}.weight"))?,
                take(map, format!("{name}.bias"))?,
                padding,
            ))
        }
        fn bn<T: Element>(map: &mut EntryMap, name: &str) -> Result<BatchNorm2d<T>> {
            let g = take::<T>(map, format!("{name}.gamma"))?;
            let mut b = BatchNorm2d::new(g.numel());
            b.gamma = g.with_grad();
            b.beta = take(map, format!("{name}.beta"))?.with_grad();
            b.running_mean = take(map, format!("{name}.running_mean"))?;
            b.running_var = take(map, format!("{name}.running_var"))?;
            Ok(b)
        }
        fn level<T: Element>(
            map: &mut EntryMap,
            prefix: &str,
            pad: usize,
            dropout_p: f64,
        ) -> Result<Level<T>> {
            Ok(Level {
                block1: ConvBlock {
                    conv: conv(map, &format!("{prefix}.conv1"), pad)?,
                    bn: bn(map, &format!("{prefix}.bn1"))?,
                    relu: Relu6::new(),
                    drop: Dropout::new(dropout_p),
                },
                block2: ConvBlock {
                    conv: conv(map, &format!("{prefix}.conv2"), pad)?,
                    bn: bn(map, &format!("{prefix}.bn2"))?,
                    relu: Relu6::new(),
                    drop: Dropout::new(dropout_p),
                },
            })
        }
        let pad = config.kernel_size / 2;
        let enc: Vec<Level<T>> = (0..config.depth)
            .map(|i| level(&mut map, &format!("enc{i}"), pad, config.dropout_p))
            .collect::<Result<_>>()?;
        let upconvs: Vec<Conv2d<T>> = (0..config.depth - 1)
            .map(|i| conv(&mut map, &format!("up{i}.conv"), pad))
            .collect::<Result<_>>()?;
        let dec: Vec<Level<T>> = (0..config.depth - 1)
            .map(|i| level(&mut map, &format!("dec{i}"), pad, config.dropout_p))
            .collect::<Result<_>>()?;
        let final_conv = conv(&mut map, "final", 0)?;
        Ok(Unet {
            config,
            enc,
            pools: (0..config.depth - 1).map(|_| MaxPool2::new()).collect(),
            upsamples: (0..config.depth - 1).map(|_| UpsampleNearest2::new()).collect(),
            upconvs,
            dec,
            final_conv,
            skips: None,
        })
    }

    /// Export back to the portable form, preserving entry order.
    pub fn to_weights(&self) -> ModelWeights {
        let mut entries = Vec::new();
        let push = |entries: &mut Vec<(String, Tensor<f32>)>, name: String, t: &Tensor<T>| {
            entries.push((name, t.cast::<f32>()));
        };
        let push_block = |entries: &mut Vec<(String, Tensor<f32>)>, prefix: &str, lv: &Level<T>| {
            push(entries, format!("{prefix}.conv1.weight"), &lv.block1.conv.weight);
            push(entries, format!("{prefix}.conv1.bias"), &lv.block1.conv.bias);
            push(entries, format!("{prefix}.bn1.gamma"), &lv.block1.bn.gamma);
            push(entries, format!("{prefix}.bn1.beta"), &lv.block1.bn.beta);
            push(entries, format!("{prefix}.bn1.running_mean"), &lv.block1.bn.running_mean);
            push(entries, format!("{prefix}.bn1.running_var"), &lv.block1.bn.running_var);
            push(entries, format!("{prefix}.conv2.weight"), &lv.block2.conv.weight);
            push(entries, format!("{prefix}.conv2.bias"), &lv.block2.conv.bias);
            push(entries, format!("{prefix}.bn2.gamma"), &lv.block2.bn.gamma);
            push(entries, format!("{prefix}.bn2.beta"), &lv.block2.bn.beta);
            push(entries, format!("{prefix}.bn2.running_mean"), &lv.block2.bn.running_mean);
            push(entries, format!("{prefix}.bn2.running_var"), &lv.block2.bn.running_var);
        };
        for (i, lv) in self.enc.iter().enumerate() {
            push_block(&mut entries, &format!("enc{i}"), lv);
        }
        for (i, c) in self.upconvs.iter().enumerate() {
            push(&mut entries, format!("up{i}.conv.weight"), &c.weight);
            push(&mut entries, format!("up{i}.conv.bias"), &c.bias);
        }
        for (i, lv) in self.dec.iter().enumerate() {
            push_block(&mut entries, &format!("dec{i}"), lv);
        }
        push(&mut entries, "final.weight".to_string(), &self.final_conv.weight);
        push(&mut entries, "final.bias".to_string(), &self.final_conv.bias);
        ModelWeights {
            config: self.config,
            entries,
        }
    }

    pub fn check_divisible(&self, h: usize, w: usize) -> Result<()> {
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} not divisible by {d}; tile or pad the input"
            )));
        }
        Ok(())
    }

    /// Forward pass to raw class logits [N,2,H,W].
    pub fn forward_logits(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        dropout_seed: u64,
        record: bool,
    ) -> Result<Tensor<T>> {
        let &[_, _, h, w] = x.shape() else {
            return Err(Error::invalid(format!("expected 4-d input, got {:?}", x.shape())));
        };
        self.check_divisible(h, w)?;
        let mut seed = dropout_seed;
        let mut next_seed = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            seed
        };
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth - 1);
        let mut cur = x.clone();
        for i in 0..depth - 1 {
            cur = self.enc[i].forward(&cur, mode, next_seed(), record)?;
            skips.push(cur.clone());
            cur = self.pools[i].forward(&cur, record)?;
        }
        cur = self.enc[depth - 1].forward(&cur, mode, next_seed(), record)?;
        for i in (0..depth - 1).rev() {
            cur = self.upsamples[i].forward(&cur, record)?;
            cur = self.upconvs[i].forward(&cur, record)?;
            cur = concat_channels(&skips[i], &cur)?;
            cur = self.dec[i].forward(&cur, mode, next_seed(), record)?;
        }
        let logits = self.final_conv.forward(&cur, record)?;
        logits.check_finite("unet logits")?;
        if record {
            self.skips = Some(skips);
        }
        Ok(logits)
    }

    /// Reverse-mode pass; accumulates parameter gradients from a recorded
    /// forward. Errors when no forward pass was recorded.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let skips = self
            .skips
            .take()
            .ok_or_else(|| Error::NoForwardPass("unet backward".into()))?;
        let depth = self.config.depth;
        let mut g = self.final_conv.backward(grad_logits)?;
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; depth - 1];
        for i in 0..depth - 1 {
            g = self.dec[i].backward(&g)?;
            let c = skips[i].shape()[1];
            let (gs, gu) = split_channels(&g, c);
            skip_grads[i] = Some(gs);
            g = self.upconvs[i].backward(&gu)?;
            g = self.upsamples[i].backward(&g)?;
        }
        g = self.enc[depth - 1].backward(&g)?;
        for i in (0..depth - 1).rev() {
            g = self.pools[i].backward(&g)?;
            let gs = skip_grads[i].take().unwrap();
            for (a, b) in g.data_mut().iter_mut().zip(gs.data()) {
                *a = *a + *b;
            }
            g = self.enc[i].backward(&g)?;
        }
        Ok(())
    }

    /// Stable-order mutable views of all trainable parameters.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (i, lv) in self.enc.iter_mut().enumerate() {
            push_level_params(&mut out, &format!("enc{i}"), lv);
        }
        for (i, c) in self.upconvs.iter_mut().enumerate() {
            out.push((format!("up{i}.conv.weight"), &mut c.weight));
            out.push((format!("up{i}.conv.bias"), &mut c.bias));
        }
        for (i, lv) in self.dec.iter_mut().enumerate() {
            push_level_params(&mut out, &format!("dec{i}"), lv);
        }
        out.push(("final.weight".to_string(), &mut self.final_conv.weight));
        out.push(("final.bias".to_string(), &mut self.final_conv.bias));
        out
    }

    pub fn new_adam(&self, learning_rate: f64, epsilon: f64) -> AdamState<T> {
        let sizes: Vec<usize> = layer_specs(&self.config)
            .iter()
            .filter(|(n, _)| !n.contains("running_"))
            .map(|(_, s)| s.iter().product())
            .collect();
        AdamState::new(&sizes, learning_rate, epsilon)
    }

    /// Infer-mode vessel-probability map for one image scaled to [0,1].
    pub fn infer_image(&mut self, image: &GrayImage) -> Result<ProbMap> {
        let (h, w) = (image.height(), image.width());
        let data: Vec<T> = image
            .data()
            .iter()
            .map(|&v| T::from_f64(v as f64 / 255.0))
            .collect();
        let x = Tensor::new(&[1, 1, h, w], data)?;
        let logits = self.forward_logits(&x, Mode::Infer, 0, false)?;
        let probs = softmax_probs(&logits)?;
        let vessel: Vec<f32> = probs.data()[h * w..2 * h * w]
            .iter()
            .map(|v| Element::to_f64(*v) as f32)
            .collect();
        ProbMap::new(w, h, vessel)
    }
}

fn push_level_params<'a, T: Element>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    prefix: &str,
    lv: &'a mut Level<T>,
) {
    out.push((format!("{prefix}.conv1.weight"), &mut lv.block1.conv.weight));
    out.push((format!("{prefix}.conv1.bias"), &mut lv.block1.conv.bias));
    out.push((format!("{prefix}.bn1.gamma"), &mut lv.block1.bn.gamma));
    out.push((format!("{prefix}.bn1.beta"), &mut lv.block1.bn.beta));
    out.push((format!("{prefix}.conv2.weight"), &mut lv.block2.conv.weight));
    out.push((format!("{prefix}.conv2.bias"), &mut lv.block2.conv.bias));
    out.push((format!("{prefix}.bn2.gamma"), &mut lv.block2.bn.gamma));
    out.push((format!("{prefix}.bn2.beta"), &mut lv.block2.bn.beta));
}

/// One-shot forward of a single image through stored weights.
pub fn forward_image(weights: &ModelWeights, image: &GrayImage) -> Result<ProbMap> {
    let mut net = Unet::<f32>::from_weights(weights)?;
    net.infer_image(image)
}

/// Atomic weight write helper used by training code.
pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    weights.save(path)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    ModelWeights::load(path)
}
