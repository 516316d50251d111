//! Data augmentation: lossless 90-degree rotations, contrast adjustments
//! (CLAHE and percentile intensity remapping), and motion-simulating
//! random strip shuffles. Geometric transforms always move image and mask
//! in lockstep; intensity transforms touch the image only.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastOp {
    Clahe,
    PercentileRemap,
}

#[derive(Debug, Clone)]
pub struct AugmentPlan {
    pub seed: u64,
    pub plain_rotations: usize,
    pub contrast_rotations: usize,
    pub strip_count_range: (usize, usize),
    pub contrast_ops: Vec<ContrastOp>,
    /// Strip shuffling applies to the plain orientations only unless
    /// widened to the contrast variants as well.
    pub shuffle_contrast_variants: bool,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        AugmentPlan {
            seed: 0,
            plain_rotations: 3,
            contrast_rotations: 5,
            strip_count_range: (4, 12),
            contrast_ops: vec![ContrastOp::Clahe, ContrastOp::PercentileRemap],
            shuffle_contrast_variants: false,
        }
    }
}

impl AugmentPlan {
    /// Number of pairs emitted per input pair; a pure function of the plan.
    pub fn expansion_factor(&self) -> usize {
        let orientations = self.plain_rotations + 1;
        let shuffled = if self.shuffle_contrast_variants {
            orientations + self.contrast_rotations
        } else {
            orientations
        };
        1 + self.plain_rotations + self.contrast_rotations + shuffled
    }
}

fn rotate90_dims(w: usize, h: usize, k: u8) -> (usize, usize) {
    if k % 2 == 0 {
        (w, h)
    } else {
        (h, w)
    }
}

/// Destination of source pixel (r, c) under k quarter-turns clockwise:
/// k=1 sends (r, c) of an HxW raster to (c, H-1-r).
fn rotate_index(r: usize, c: usize, w: usize, h: usize, k: u8) -> (usize, usize) {
    match k % 4 {
        0 => (r, c),
        1 => (c, h - 1 - r),
        2 => (h - 1 - r, w - 1 - c),
        _ => (w - 1 - c, r),
    }
}

/// Exact lossless rotation by k*90 degrees clockwise.
pub fn rotate90(image: &GrayImage, k: u8) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let (nw, nh) = rotate90_dims(w, h, k);
    let mut out = GrayImage::zeros(nw, nh);
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = rotate_index(r, c, w, h, k);
            out.set(nr, nc, image.get(r, c));
        }
    }
    out
}

pub fn rotate90_mask(mask: &BinaryMask, k: u8) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let (nw, nh) = rotate90_dims(w, h, k);
    let mut out = BinaryMask::filled(nw, nh, false);
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = rotate_index(r, c, w, h, k);
            out.set(nr, nc, mask.get(r, c));
        }
    }
    out
}

/// Histogram-equalization mapping of one tile: v -> round(255 * cdf(v)/n),
/// after clipping each bin at `clip` and redistributing the excess evenly.
fn tile_mapping(hist: &[u64; 256], n: u64, clip: Option<u64>) -> [u8; 256] {
    let mut h: Vec<u64> = hist.to_vec();
    if let Some(clip) = clip {
        let mut excess: u64 = h.iter().map(|&b| b.saturating_sub(clip)).sum();
        for b in h.iter_mut() {
            *b = (*b).min(clip);
        }
        // redistribute evenly; remainder goes one per bin from the bottom
        let per_bin = excess / 256;
        excess %= 256;
        for (i, b) in h.iter_mut().enumerate() {
            *b += per_bin + u64::from((i as u64) < excess);
        }
    }
    let mut map = [0u8; 256];
    let mut cdf = 0u64;
    for v in 0..256 {
        cdf += h[v];
        map[v] = ((255.0 * cdf as f64 / n as f64).round() as i64).clamp(0, 255) as u8;
    }
    map
}

/// Contrast-limited adaptive histogram equalization with bilinear
/// interpolation between per-tile mappings. `clip_limit` is a multiple of
/// the mean bin height; values below 1 are rejected.
pub fn clahe(image: &GrayImage, tiles: (usize, usize), clip_limit: f64) -> Result<GrayImage> {
    let (tx, ty) = tiles;
    if tx == 0 || ty == 0 {
        return Err(Error::invalid("clahe needs at least one tile"));
    }
    if clip_limit < 1.0 {
        return Err(Error::invalid(format!("clip_limit must be >= 1, got {clip_limit}")));
    }
    let (w, h) = (image.width(), image.height());
    // pad by edge replication so tiles divide evenly, crop at the end
    let tile_w = w.div_ceil(tx);
    let tile_h = h.div_ceil(ty);
    let (pw, ph) = (tile_w * tx, tile_h * ty);
    let sample = |r: usize, c: usize| image.get(r.min(h - 1), c.min(w - 1));

    let n = (tile_w * tile_h) as u64;
    let clip = if clip_limit.is_finite() {
        Some(((clip_limit * n as f64 / 256.0).max(1.0)) as u64)
    } else {
        None
    };
    let mut maps = vec![[0u8; 256]; tx * ty];
    for tr in 0..ty {
        for tc in 0..tx {
            let mut hist = [0u64; 256];
            for r in tr * tile_h..(tr + 1) * tile_h {
                for c in tc * tile_w..(tc + 1) * tile_w {
                    hist[sample(r, c) as usize] += 1;
                }
            }
            maps[tr * tx + tc] = tile_mapping(&hist, n, clip);
        }
    }

    let mut out = GrayImage::zeros(w, h);
    for r in 0..h {
        // position among tile centers
        let fy = (r as f64 + 0.5) / tile_h as f64 - 0.5;
        let ty0 = (fy.floor().max(0.0) as usize).min(ty - 1);
        let ty1 = (ty0 + 1).min(ty - 1);
        let wy = (fy - ty0 as f64).clamp(0.0, 1.0);
        let _ = ph;
        let _ = pw;
        for c in 0..w {
            let fx = (c as f64 + 0.5) / tile_w as f64 - 0.5;
            let tx0 = (fx.floor().max(0.0) as usize).min(tx - 1);
            let tx1 = (tx0 + 1).min(tx - 1);
            let wx = (fx - tx0 as f64).clamp(0.0, 1.0);
            let v = image.get(r, c) as usize;
            let m00 = maps[ty0 * tx + tx0][v] as f64;
            let m01 = maps[ty0 * tx + tx1][v] as f64;
            let m10 = maps[ty1 * tx + tx0][v] as f64;
            let m11 = maps[ty1 * tx + tx1][v] as f64;
            let top = m00 * (1.0 - wx) + m01 * wx;
            let bot = m10 * (1.0 - wx) + m11 * wx;
            out.set(r, c, (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

fn percentile(sorted: &[u8], pct: f64) -> u8 {
    let n = sorted.len();
    let idx = ((pct / 100.0 * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Linear intensity stretch sending the `low` percentile to 0 and the
/// `high` percentile to 255, clamped.
pub fn percentile_remap(image: &GrayImage, low: f64, high: f64) -> Result<GrayImage> {
    if low >= high {
        return Err(Error::invalid(format!("percentiles must satisfy low < high ({low} vs {high})")));
    }
    let mut sorted = image.data().to_vec();
    sorted.sort_unstable();
    let lo = percentile(&sorted, low);
    let hi = percentile(&sorted, high);
    if hi == lo {
        return Ok(image.clone());
    }
    let span = (hi - lo) as f64;
    let data = image
        .data()
        .iter()
        .map(|&v| (((v as f64 - lo as f64) * 255.0 / span).round()).clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(image.width(), image.height(), data)
}

/// Partition rows into randomly sized horizontal strips and re-order them;
/// the identical permutation is applied to the mask.
pub fn strip_shuffle(
    image: &GrayImage,
    mask: &BinaryMask,
    seed: u64,
    count_range: (usize, usize),
) -> Result<(GrayImage, BinaryMask)> {
    let (w, h) = (image.width(), image.height());
    if mask.width() != w || mask.height() != h {
        return Err(Error::shape("strip_shuffle mask extents", &[w, h], &[mask.width(), mask.height()]));
    }
    let (lo, hi) = count_range;
    if lo == 0 || lo > hi {
        return Err(Error::invalid(format!("bad strip count range {lo}..{hi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(lo..=hi).min(h);
    // count-1 distinct cut rows
    let mut cuts: Vec<usize> = (1..h).collect();
    cuts.shuffle(&mut rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(count - 1).collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(h);
    let mut strips: Vec<(usize, usize)> = cuts.windows(2).map(|p| (p[0], p[1])).collect();
    strips.shuffle(&mut rng);

    let mut out_img = GrayImage::zeros(w, h);
    let mut out_mask = BinaryMask::filled(w, h, false);
    let mut dst = 0usize;
    for (start, end) in strips {
        for r in start..end {
            for c in 0..w {
                out_img.set(dst, c, image.get(r, c));
                out_mask.set(dst, c, mask.get(r, c));
            }
            dst += 1;
        }
    }
    Ok((out_img, out_mask))
}

fn apply_contrast(image: &GrayImage, op: ContrastOp) -> Result<GrayImage> {
    match op {
        ContrastOp::Clahe => clahe(image, (8, 8), 2.0),
        ContrastOp::PercentileRemap => percentile_remap(image, 1.0, 99.0),
    }
}

/// Expand one (image, mask) pair per the plan: the original, the plain
/// rotations, the contrast-adjusted rotations, and a strip-shuffled
/// variant of each plain orientation.
pub fn expand(
    image: &GrayImage,
    mask: &BinaryMask,
    plan: &AugmentPlan,
) -> Result<Vec<(GrayImage, BinaryMask)>> {
    let mut out = Vec::with_capacity(plan.expansion_factor());
    for k in 0..=plan.plain_rotations {
        out.push((rotate90(image, k as u8), rotate90_mask(mask, k as u8)));
    }
    if !plan.contrast_ops.is_empty() {
        for j in 0..plan.contrast_rotations {
            let k = (j % (plan.plain_rotations + 1)) as u8;
            let op = plan.contrast_ops[j % plan.contrast_ops.len()];
            let adjusted = apply_contrast(image, op)?;
            out.push((rotate90(&adjusted, k), rotate90_mask(mask, k)));
        }
    }
    let shuffle_base = out.len();
    let shuffle_count = if plan.shuffle_contrast_variants {
        shuffle_base
    } else {
        plan.plain_rotations + 1
    };
    for idx in 0..shuffle_count {
        let (img, msk) = &out[idx];
        let seed = plan
            .seed
            .wrapping_mul(0x9E3779B97F4A7C15)
            .wrapping_add(idx as u64);
        out.push(strip_shuffle(img, msk, seed, plan.strip_count_range)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    fn test_mask(w: usize, h: usize, seed: u64) -> BinaryMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::new(w, h, (0..w * h).map(|_| rng.gen_bool(0.3)).collect()).unwrap()
    }

    #[test]
    fn rotate_zero_is_identity_and_four_turns_close() {
        let img = test_image(7, 5, 1);
        assert_eq!(rotate90(&img, 0), img);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate90(&cur, 1);
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn rotate_index_map_oracle() {
        let img = test_image(9, 6, 2);
        let rot = rotate90(&img, 1);
        assert_eq!((rot.width(), rot.height()), (6, 9));
        for r in 0..6 {
            for c in 0..9 {
                assert_eq!(rot.get(c, 6 - 1 - r), img.get(r, c));
            }
        }
    }

    #[test]
    fn clahe_constant_image_stays_constant() {
        let img = GrayImage::new(32, 32, vec![120; 1024]).unwrap();
        let out = clahe(&img, (4, 4), 2.0).unwrap();
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v| v == first));
    }

    #[test]
    fn clahe_unclipped_single_tile_is_global_equalization() {
        let img = test_image(32, 32, 3);
        let out = clahe(&img, (1, 1), f64::INFINITY).unwrap();
        // direct CDF-mapping oracle
        let mut hist = [0u64; 256];
        for &v in img.data() {
            hist[v as usize] += 1;
        }
        let mut cdf = [0u64; 256];
        let mut acc = 0;
        for v in 0..256 {
            acc += hist[v];
            cdf[v] = acc;
        }
        for (i, &v) in img.data().iter().enumerate() {
            let expect = (255.0 * cdf[v as usize] as f64 / 1024.0).round() as u8;
            assert_eq!(out.data()[i], expect);
        }
    }

    #[test]
    fn percentile_remap_ramp_is_near_identity() {
        let data: Vec<u8> = (0..256).map(|v| v as u8).collect();
        let img = GrayImage::new(16, 16, data).unwrap();
        let out = percentile_remap(&img, 1.0, 99.0).unwrap();
        for v in 30..220usize {
            let d = (out.data()[v] as i32 - img.data()[v] as i32).abs();
            assert!(d <= 3, "value {v} moved by {d}");
        }
        assert_eq!(out.data()[0], 0);
        assert_eq!(out.data()[255], 255);
    }

    #[test]
    fn percentile_remap_constant_is_constant() {
        let img = GrayImage::new(8, 8, vec![77; 64]).unwrap();
        assert_eq!(percentile_remap(&img, 1.0, 99.0).unwrap(), img);
    }

    #[test]
    fn percentile_remap_saturates_tails() {
        let img = test_image(64, 64, 4);
        let out = percentile_remap(&img, 5.0, 95.0).unwrap();
        assert_eq!(*out.data().iter().min().unwrap(), 0);
        assert_eq!(*out.data().iter().max().unwrap(), 255);
    }

    #[test]
    fn single_strip_is_identity() {
        let img = test_image(8, 8, 5);
        let mask = test_mask(8, 8, 6);
        let (oi, om) = strip_shuffle(&img, &mask, 1, (1, 1)).unwrap();
        assert_eq!(oi, img);
        assert_eq!(om, mask);
    }

    #[test]
    fn strip_shuffle_preserves_multisets_and_pairs_rows() {
        let img = test_image(16, 32, 7);
        let mask = test_mask(16, 32, 8);
        let (oi, om) = strip_shuffle(&img, &mask, 42, (4, 12)).unwrap();
        let mut a = img.data().to_vec();
        let mut b = oi.data().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        // row-hash oracle: each output row pair must exist among input row pairs
        let row_pair = |img: &GrayImage, mask: &BinaryMask, r: usize| {
            (
                img.data()[r * 16..(r + 1) * 16].to_vec(),
                mask.data()[r * 16..(r + 1) * 16].to_vec(),
            )
        };
        let mut input_rows: Vec<_> = (0..32).map(|r| row_pair(&img, &mask, r)).collect();
        let mut output_rows: Vec<_> = (0..32).map(|r| row_pair(&oi, &om, r)).collect();
        input_rows.sort();
        output_rows.sort();
        assert_eq!(input_rows, output_rows);
        // determinism
        let (oi2, om2) = strip_shuffle(&img, &mask, 42, (4, 12)).unwrap();
        assert_eq!((oi, om), (oi2, om2));
    }

    #[test]
    fn expand_emits_exactly_thirteen_default_pairs() {
        let img = test_image(32, 32, 9);
        let mask = test_mask(32, 32, 10);
        let plan = AugmentPlan::default();
        assert_eq!(plan.expansion_factor(), 13);
        let pairs = expand(&img, &mask, &plan).unwrap();
        assert_eq!(pairs.len(), 13);
        // masks of geometric variants equal rotated originals
        for k in 0..4usize {
            assert_eq!(pairs[k].1, rotate90_mask(&mask, k as u8));
        }
        // contrast variants leave masks untouched (up to orientation)
        for j in 0..5usize {
            let k = (j % 4) as u8;
            assert_eq!(pairs[4 + j].1, rotate90_mask(&mask, k));
        }
        // determinism
        let again = expand(&img, &mask, &plan).unwrap();
        for (a, b) in pairs.iter().zip(&again) {
            assert_eq!(a, b);
        }
    }
}
