//! Staged training protocol: initial optimization, 3-fold cross-validated
//! hyperparameter selection, quadrant tiling, stage-1 fine-tuning on paired
//! single-frame/averaged data, and stage-2 pseudo-label expansion.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{dice, dice_masks, EvalCounts};
use crate::io;
use crate::nn::{softmax_probs, Mode};
use crate::raster::{BinaryMask, GrayImage, ProbMap};
use crate::segment::{binarize, remove_small_components, PostProcessConfig};
use crate::tensor::Tensor;
use crate::unet::{ModelWeights, Unet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub tile_grid: (usize, usize),
}

impl TrainConfig {
    /// Initial-training preset: 120 epochs, Adam lr 1e-4, epsilon 1e-5.
    pub fn initial() -> Self {
        TrainConfig {
            epochs: 120,
            learning_rate: 1e-4,
            adam_epsilon: 1e-5,
            batch_size: 4,
            seed: 0,
            tile_grid: (2, 2),
        }
    }

    /// Fine-tuning preset: lr 1e-2, epsilon 1e-2; epoch count configurable.
    pub fn fine_tune() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 1e-2,
            adam_epsilon: 1e-2,
            ..TrainConfig::initial()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.adam_epsilon <= 0.0 {
            return Err(Error::invalid(format!("bad adam epsilon {}", self.adam_epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Manual,
    AveragedAuto,
    PseudoLabel,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceTag::Manual => "manual",
            SourceTag::AveragedAuto => "averaged_auto",
            SourceTag::PseudoLabel => "pseudo_label",
        })
    }
}

impl FromStr for SourceTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manual" => Ok(SourceTag::Manual),
            "averaged_auto" => Ok(SourceTag::AveragedAuto),
            "pseudo_label" => Ok(SourceTag::PseudoLabel),
            other => Err(Error::invalid(format!("unknown source tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub tag: SourceTag,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub items: Vec<LabeledItem>,
}

impl LabeledSet {
    pub fn new() -> Self {
        LabeledSet { items: Vec::new() }
    }

    pub fn push(&mut self, image: GrayImage, mask: BinaryMask, tag: SourceTag) -> Result<()> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::shape(
                "labeled pair extents",
                &[image.width(), image.height()],
                &[mask.width(), mask.height()],
            ));
        }
        self.items.push(LabeledItem { image, mask, tag });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Replace every item by its four quadrant tiles, tags preserved.
    pub fn tiled_quadrants(&self) -> Result<LabeledSet> {
        let mut out = LabeledSet::new();
        for item in &self.items {
            for (img, msk) in split_quadrants(&item.image, &item.mask)? {
                out.push(img, msk, item.tag)?;
            }
        }
        Ok(out)
    }
}

/// Split one pair into its four non-overlapping quadrants, ordered
/// top-left, top-right, bottom-left, bottom-right.
pub fn split_quadrants(
    image: &GrayImage,
    mask: &BinaryMask,
) -> Result<Vec<(GrayImage, BinaryMask)>> {
    let (w, h) = (image.width(), image.height());
    if mask.width() != w || mask.height() != h {
        return Err(Error::shape("quadrant pair extents", &[w, h], &[mask.width(), mask.height()]));
    }
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::invalid(format!("quadrant split needs even extents, got {w}x{h}")));
    }
    let (hw, hh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(4);
    for qr in 0..2 {
        for qc in 0..2 {
            let mut img = GrayImage::zeros(hw, hh);
            let mut msk = BinaryMask::filled(hw, hh, false);
            for r in 0..hh {
                for c in 0..hw {
                    img.set(r, c, image.get(qr * hh + r, qc * hw + c));
                    msk.set(r, c, mask.get(qr * hh + r, qc * hw + c));
                }
            }
            out.push((img, msk));
        }
    }
    Ok(out)
}

/// Exact inverse of `split_quadrants`.
pub fn reassemble_quadrants(tiles: &[(GrayImage, BinaryMask)]) -> Result<(GrayImage, BinaryMask)> {
    if tiles.len() != 4 {
        return Err(Error::invalid(format!("expected 4 quadrants, got {}", tiles.len())));
    }
    let (hw, hh) = (tiles[0].0.width(), tiles[0].0.height());
    let mut img = GrayImage::zeros(hw * 2, hh * 2);
    let mut msk = BinaryMask::filled(hw * 2, hh * 2, false);
    for (q, (ti, tm)) in tiles.iter().enumerate() {
        if ti.width() != hw || ti.height() != hh {
            return Err(Error::shape("quadrant extents", &[hw, hh], &[ti.width(), ti.height()]));
        }
        let (qr, qc) = (q / 2, q % 2);
        for r in 0..hh {
            for c in 0..hw {
                img.set(qr * hh + r, qc * hw + c, ti.get(r, c));
                msk.set(qr * hh + r, qc * hw + c, tm.get(r, c));
            }
        }
    }
    Ok((img, msk))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .epochs
            .iter()
            .map(|e| vec![e.epoch.to_string(), format!("{:.6}", e.loss), format!("{:.6}", e.dice)])
            .collect();
        io::save_csv(path, "epoch,loss,dice", &rows)
    }
}

/// Stack a batch of pairs into ([N,1,H,W] input, flat target booleans).
fn stack_batch(items: &[&LabeledItem]) -> Result<(Tensor<f32>, Vec<bool>)> {
    let (w, h) = (items[0].image.width(), items[0].image.height());
    let mut data = Vec::with_capacity(items.len() * h * w);
    let mut target = Vec::with_capacity(items.len() * h * w);
    for item in items {
        if item.image.width() != w || item.image.height() != h {
            return Err(Error::shape(
                "batch extents",
                &[w, h],
                &[item.image.width(), item.image.height()],
            ));
        }
        data.extend(item.image.data().iter().map(|&v| v as f32 / 255.0));
        target.extend_from_slice(item.mask.data());
    }
    Ok((Tensor::new(&[items.len(), 1, h, w], data)?, target))
}

/// Adam-optimize the weights over the labeled set. Deterministic under
/// `config.seed`; aborts with an epoch/batch identifier on non-finite loss.
pub fn train(
    weights: &ModelWeights,
    data: &LabeledSet,
    config: &TrainConfig,
) -> Result<(ModelWeights, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut net = Unet::<f32>::from_weights(weights)?;
    let mut adam = net.new_adam(config.learning_rate, config.adam_epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut counts = EvalCounts::default();
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let items: Vec<&LabeledItem> = chunk.iter().map(|&i| &data.items[i]).collect();
            let (x, target) = stack_batch(&items)?;
            let dropout_seed = config
                .seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add(((epoch as u64) << 20) | batch_idx as u64);
            let logits = net.forward_logits(&x, Mode::Train, dropout_seed, true)?;
            let (loss, grad) = crate::nn::softmax_cross_entropy(&logits, &target)?;
            let loss = loss as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch}, batch {batch_idx}"
                )));
            }
            loss_sum += loss;
            batches += 1;
            accumulate_train_counts(&logits, &target, &mut counts)?;
            net.backward(&grad)?;
            let mut params = net.params_mut();
            let mut refs: Vec<(&str, &mut Tensor<f32>)> =
                params.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
            adam.step(&mut refs)?;
        }
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            dice: dice(&counts),
        });
    }
    Ok((net.to_weights(), history))
}

fn accumulate_train_counts(
    logits: &Tensor<f32>,
    target: &[bool],
    counts: &mut EvalCounts,
) -> Result<()> {
    let probs = softmax_probs(logits)?;
    let &[n, _, h, w] = probs.shape() else { unreachable!() };
    let plane = h * w;
    for s in 0..n {
        for i in 0..plane {
            let p = probs.data()[s * 2 * plane + plane + i];
            let pred = p >= 0.5;
            let truth = target[s * plane + i];
            match (pred, truth) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    Ok(())
}

/// Mean held-out Dice of the weights over a labeled set, binarizing the
/// probability maps at `threshold`.
pub fn mean_dice(weights: &ModelWeights, data: &LabeledSet, threshold: f32) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut net = Unet::<f32>::from_weights(weights)?;
    let mut total = 0.0;
    for item in &data.items {
        let prob = net.infer_image(&item.image)?;
        let pred = binarize(&prob, threshold);
        total += dice_masks(&pred, &item.mask)?;
    }
    Ok(total / data.len() as f64)
}

/// Deterministic fold assignment: shuffled indices dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignment[idx] = pos % folds;
    }
    assignment
}

/// 3-fold (by default) cross-validated grid search over (lr, epsilon).
/// Selects the candidate with maximum mean validation Dice; ties break to
/// the smaller lr, then the smaller epsilon. A candidate whose training
/// diverges scores 0 on that fold. Returns the winner and the per-candidate
/// per-fold Dice table.
pub fn cross_validate(
    weights: &ModelWeights,
    data: &LabeledSet,
    grid: &[(f64, f64)],
    folds: usize,
    config: &TrainConfig,
) -> Result<((f64, f64), Vec<Vec<f64>>)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    if folds < 2 || data.len() < folds {
        return Err(Error::invalid(format!(
            "need at least {folds} samples for {folds}-fold cross-validation, got {}",
            data.len()
        )));
    }
    let assignment = fold_assignment(data.len(), folds, config.seed);
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, (f64, f64))> = None;
    for &(lr, eps) in grid {
        let mut fold_scores = Vec::with_capacity(folds);
        for fold in 0..folds {
            let mut train_set = LabeledSet::new();
            let mut val_set = LabeledSet::new();
            for (i, item) in data.items.iter().enumerate() {
                let dst = if assignment[i] == fold { &mut val_set } else { &mut train_set };
                dst.items.push(item.clone());
            }
            let candidate = TrainConfig {
                learning_rate: lr,
                adam_epsilon: eps,
                ..*config
            };
            let score = match train(weights, &train_set, &candidate) {
                Ok((trained, _)) => mean_dice(&trained, &val_set, 0.5)?,
                Err(Error::NonFinite(_)) => 0.0,
                Err(e) => return Err(e),
            };
            fold_scores.push(score);
        }
        let mean = fold_scores.iter().sum::<f64>() / folds as f64;
        table.push(fold_scores);
        let better = match best {
            None => true,
            Some((bm, (blr, beps))) => {
                mean > bm || (mean == bm && (lr < blr || (lr == blr && eps < beps)))
            }
        };
        if better {
            best = Some((mean, (lr, eps)));
        }
    }
    Ok((best.unwrap().1, table))
}

/// Continue optimization from existing weights with the fine-tune preset
/// semantics (same topology; caller supplies the config).
pub fn fine_tune_stage1(
    initial: &ModelWeights,
    paired: &LabeledSet,
    config: &TrainConfig,
) -> Result<(ModelWeights, TrainHistory)> {
    if config.epochs == 0 {
        return Ok((initial.clone(), TrainHistory::default()));
    }
    train(initial, paired, config)
}

/// One (single-frame, averaged) image pair awaiting pseudo-labeling.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub single: GrayImage,
    pub averaged: GrayImage,
}

/// Segment each averaged image with the intermediate network; accept a
/// pair when the Dice between the post-processed segmentations of the
/// averaged image and of its single frame reaches the gate. Accepted
/// averaged-image segmentations become training masks for the single
/// frames.
pub fn pseudo_label_expand(
    intermediate: &ModelWeights,
    pool: &[FramePair],
    gate: f64,
    post: &PostProcessConfig,
) -> Result<LabeledSet> {
    let mut net = Unet::<f32>::from_weights(intermediate)?;
    let mut out = LabeledSet::new();
    let mut segment = |img: &GrayImage| -> Result<BinaryMask> {
        let prob: ProbMap = net.infer_image(img)?;
        let mask = binarize(&prob, post.binarize_threshold);
        Ok(remove_small_components(&mask, post.min_cluster_px, post.connectivity))
    };
    for pair in pool {
        let seg_avg = segment(&pair.averaged)?;
        let seg_single = segment(&pair.single)?;
        if dice_masks(&seg_avg, &seg_single)? >= gate {
            out.push(pair.single.clone(), seg_avg, SourceTag::PseudoLabel)?;
        }
    }
    if out.is_empty() {
        eprintln!("warning: pseudo-label gate {gate} accepted no pairs");
    }
    Ok(out)
}

/// As stage 1, on the pseudo-label-expanded set.
pub fn fine_tune_stage2(
    initial: &ModelWeights,
    expanded: &LabeledSet,
    config: &TrainConfig,
) -> Result<(ModelWeights, TrainHistory)> {
    fine_tune_stage1(initial, expanded, config)
}

/// One manifest record: image path, mask path, source tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub tag: SourceTag,
}

/// Parse a dataset manifest: one `image_path, mask_path, tag` line per
/// item; blank lines and `#` comments ignored. Relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
    };
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "manifest line {}: expected `image, mask, tag`, got {line:?}",
                lineno + 1
            )));
        }
        out.push(ManifestEntry {
            image: resolve(parts[0]),
            mask: resolve(parts[1]),
            tag: parts[2].parse()?,
        });
    }
    Ok(out)
}

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!("{}, {}, {}\n", e.image.display(), e.mask.display(), e.tag));
    }
    io::write_atomic_str(path, &text)
}

/// Load the images and masks a manifest points at.
pub fn load_labeled_set(manifest: &Path) -> Result<LabeledSet> {
    let mut set = LabeledSet::new();
    for entry in load_manifest(manifest)? {
        let image = io::load_gray(&entry.image)?;
        let mask = io::load_mask(&entry.mask)?;
        set.push(image, mask, entry.tag)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::{build, UnetConfig};
    use rand::Rng;

    fn tiny_config() -> UnetConfig {
        UnetConfig {
            depth: 2,
            base_channels: 4,
            ..UnetConfig::default()
        }
    }

    fn striped_pair(w: usize, h: usize, seed: u64) -> (GrayImage, BinaryMask) {
        // vertical stripes with strong contrast and mild pixel noise
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase: usize = rng.gen_range(0..4);
        let mut img = GrayImage::zeros(w, h);
        let mut msk = BinaryMask::filled(w, h, false);
        for r in 0..h {
            for c in 0..w {
                let vessel = (c + phase) % 4 < 2;
                msk.set(r, c, vessel);
                let base: i32 = if vessel { 210 } else { 40 };
                let noise: i32 = rng.gen_range(-15..=15);
                img.set(r, c, (base + noise).clamp(0, 255) as u8);
            }
        }
        (img, msk)
    }

    fn striped_set(count: usize, w: usize, h: usize, seed: u64) -> LabeledSet {
        let mut set = LabeledSet::new();
        for i in 0..count {
            let (img, msk) = striped_pair(w, h, seed + i as u64);
            set.push(img, msk, SourceTag::Manual).unwrap();
        }
        set
    }

    #[test]
    fn quadrant_split_roundtrip_and_windows() {
        let (img, msk) = striped_pair(8, 6, 3);
        let tiles = split_quadrants(&img, &msk).unwrap();
        assert_eq!(tiles.len(), 4);
        // slicing oracle: quadrant 1 is the top-right window
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(tiles[1].0.get(r, c), img.get(r, c + 4));
                assert_eq!(tiles[1].1.get(r, c), msk.get(r, c + 4));
            }
        }
        let (ri, rm) = reassemble_quadrants(&tiles).unwrap();
        assert_eq!(ri, img);
        assert_eq!(rm, msk);
    }

    #[test]
    fn odd_extents_rejected() {
        let img = GrayImage::zeros(7, 6);
        let msk = BinaryMask::filled(7, 6, false);
        assert!(split_quadrants(&img, &msk).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let weights = build(&tiny_config(), 11).unwrap();
        let data = striped_set(2, 16, 16, 5);
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::initial()
        };
        let (after, history) = train(&weights, &data, &config).unwrap();
        assert_eq!(history.epochs.len(), 1);
        for ((name, before), (_, aft)) in weights.entries.iter().zip(&after.entries) {
            if name.contains("running_") {
                continue; // batch-norm running stats still update
            }
            assert_eq!(before.data(), aft.data(), "{name} changed under lr=0");
        }
    }

    #[test]
    fn same_seed_reproduces_final_weights() {
        let weights = build(&tiny_config(), 12).unwrap();
        let data = striped_set(4, 16, 16, 7);
        let config = TrainConfig {
            epochs: 2,
            learning_rate: 1e-3,
            adam_epsilon: 1e-5,
            seed: 99,
            ..TrainConfig::initial()
        };
        let (a, _) = train(&weights, &data, &config).unwrap();
        let (b, _) = train(&weights, &data, &config).unwrap();
        for ((na, ta), (nb, tb)) in a.entries.iter().zip(&b.entries) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn overfits_a_small_striped_batch() {
        let weights = build(&tiny_config(), 13).unwrap();
        let data = striped_set(8, 16, 16, 21);
        let config = TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            adam_epsilon: 1e-5,
            seed: 1,
            ..TrainConfig::initial()
        };
        let (trained, history) = train(&weights, &data, &config).unwrap();
        // train-mode history Dice is depressed by dropout; score the
        // training set in inference mode for the overfit check
        let final_dice = mean_dice(&trained, &data, 0.5).unwrap();
        assert!(final_dice > 0.9, "training-set Dice {final_dice} after overfit probe");
        let (first, last) = (history.epochs[0].loss, history.epochs.last().unwrap().loss);
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn fold_assignment_partitions_exactly() {
        let a = fold_assignment(10, 3, 4);
        assert_eq!(a.len(), 10);
        let mut sizes = [0usize; 3];
        for &f in &a {
            sizes[f] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert!(sizes.iter().all(|&s| (3..=4).contains(&s)));
        assert_eq!(a, fold_assignment(10, 3, 4));
    }

    #[test]
    fn single_candidate_grid_returns_it() {
        let weights = build(&tiny_config(), 14).unwrap();
        let data = striped_set(3, 16, 16, 31);
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::initial()
        };
        let ((lr, eps), table) =
            cross_validate(&weights, &data, &[(1e-3, 1e-5)], 3, &config).unwrap();
        assert_eq!((lr, eps), (1e-3, 1e-5));
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].len(), 3);
    }

    #[test]
    fn divergent_learning_rate_never_wins() {
        let weights = build(&tiny_config(), 15).unwrap();
        let data = striped_set(6, 16, 16, 41);
        let config = TrainConfig {
            epochs: 4,
            seed: 2,
            ..TrainConfig::initial()
        };
        let ((lr, _), _) =
            cross_validate(&weights, &data, &[(1e3, 1e-5), (1e-3, 1e-5)], 3, &config).unwrap();
        assert_eq!(lr, 1e-3);
    }

    #[test]
    fn zero_epoch_fine_tune_is_identity() {
        let weights = build(&tiny_config(), 16).unwrap();
        let data = striped_set(2, 16, 16, 51);
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::fine_tune()
        };
        let (out, history) = fine_tune_stage1(&weights, &data, &config).unwrap();
        assert!(history.epochs.is_empty());
        for ((na, ta), (nb, tb)) in weights.entries.iter().zip(&out.entries) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn pseudo_label_gate_extremes() {
        let weights = build(&tiny_config(), 17).unwrap();
        let pool: Vec<FramePair> = (0..3)
            .map(|i| {
                let (single, _) = striped_pair(16, 16, 60 + i);
                let (averaged, _) = striped_pair(16, 16, 60 + i);
                FramePair { single, averaged }
            })
            .collect();
        let post = PostProcessConfig::default();
        let all = pseudo_label_expand(&weights, &pool, 0.0, &post).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.items.iter().all(|i| i.tag == SourceTag::PseudoLabel));
        let none = pseudo_label_expand(&weights, &pool, 1.0 + 1e-9, &post).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ManifestEntry {
                image: dir.path().join("a.pgm"),
                mask: dir.path().join("a_mask.pgm"),
                tag: SourceTag::Manual,
            },
            ManifestEntry {
                image: dir.path().join("b.pgm"),
                mask: dir.path().join("b_mask.pgm"),
                tag: SourceTag::PseudoLabel,
            },
        ];
        let path = dir.path().join("manifest.txt");
        save_manifest(&path, &entries).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn relative_manifest_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "img.pgm, msk.pgm, manual\n").unwrap();
        let entries = load_manifest(&path).unwrap();
        assert_eq!(entries[0].image, dir.path().join("img.pgm"));
        assert_eq!(entries[0].mask, dir.path().join("msk.pgm"));
    }
}
