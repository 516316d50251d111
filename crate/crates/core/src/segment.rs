//! Inference front-end and segmentation post-processing: tiled forward
//! passes, probability binarization, small-cluster removal, the Otsu
//! classical baseline, and projection-artifact suppression.

use crate::components::{component_areas, label_components, Connectivity};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage, ProbMap};
use crate::unet::{ModelWeights, Unet};

#[derive(Debug, Clone, Copy)]
pub struct PostProcessConfig {
    pub binarize_threshold: f32,
    pub min_cluster_px: usize,
    pub connectivity: Connectivity,
    pub artifact_radius_px: usize,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig {
            binarize_threshold: 0.5,
            min_cluster_px: 30,
            connectivity: Connectivity::Eight,
            artifact_radius_px: 6,
        }
    }
}

/// Run the network tile by tile and stitch the per-tile probability maps
/// back to full image extents. Tiles at the right/bottom borders are
/// aligned to the border, so every pixel is covered.
pub fn infer_tiled(
    weights: &ModelWeights,
    image: &GrayImage,
    tile_h: usize,
    tile_w: usize,
) -> Result<ProbMap> {
    let mut net = Unet::<f32>::from_weights(weights)?;
    net.check_divisible(tile_h, tile_w)?;
    let (h, w) = (image.height(), image.width());
    if tile_h > h || tile_w > w {
        return Err(Error::invalid(format!(
            "tile {tile_h}x{tile_w} exceeds image {h}x{w}"
        )));
    }
    let mut out = ProbMap::zeros(w, h);
    let mut rows: Vec<usize> = (0..h / tile_h).map(|i| i * tile_h).collect();
    if h % tile_h != 0 {
        rows.push(h - tile_h);
    }
    let mut cols: Vec<usize> = (0..w / tile_w).map(|i| i * tile_w).collect();
    if w % tile_w != 0 {
        cols.push(w - tile_w);
    }
    for &r0 in &rows {
        for &c0 in &cols {
            let mut tile = GrayImage::zeros(tile_w, tile_h);
            for r in 0..tile_h {
                for c in 0..tile_w {
                    tile.set(r, c, image.get(r0 + r, c0 + c));
                }
            }
            let p = net.infer_image(&tile)?;
            for r in 0..tile_h {
                for c in 0..tile_w {
                    out.data_mut()[(r0 + r) * w + c0 + c] = p.get(r, c);
                }
            }
        }
    }
    Ok(out)
}

/// Mean absolute probability jump across interior tile seams; reported as
/// a stitching-quality statistic.
pub fn seam_discontinuity(map: &ProbMap, tile_h: usize, tile_w: usize) -> f64 {
    let (h, w) = (map.height(), map.width());
    let mut sum = 0.0f64;
    let mut n = 0u64;
    for r in (tile_h..h).step_by(tile_h) {
        for c in 0..w {
            sum += (map.get(r, c) - map.get(r - 1, c)).abs() as f64;
            n += 1;
        }
    }
    for c in (tile_w..w).step_by(tile_w) {
        for r in 0..h {
            sum += (map.get(r, c) - map.get(r, c - 1)).abs() as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// p >= threshold is vessel; the boundary value itself is vessel.
pub fn binarize(map: &ProbMap, threshold: f32) -> BinaryMask {
    BinaryMask::new(
        map.width(),
        map.height(),
        map.data().iter().map(|&p| p >= threshold).collect(),
    )
    .unwrap()
}

/// Clear every connected vessel cluster smaller than `min_px` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_px: usize, conn: Connectivity) -> BinaryMask {
    let (labels, count) = label_components(mask, false, conn);
    let areas = component_areas(&labels, count);
    let mut out = mask.clone();
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && areas[l as usize] < min_px {
            out.data_mut()[i] = false;
        }
    }
    out
}

/// Global threshold maximizing between-class variance over the 256-bin
/// histogram; pixels at or above the threshold are vessel. A constant
/// image thresholds at its single value (all-vessel mask).
pub fn otsu(image: &GrayImage) -> BinaryMask {
    let t = otsu_threshold(image);
    BinaryMask::new(
        image.width(),
        image.height(),
        image.data().iter().map(|&v| v >= t).collect(),
    )
    .unwrap()
}

/// The chosen threshold: the smallest t maximizing the between-class
/// variance of the split {v < t} vs {v >= t}.
pub fn otsu_threshold(image: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &v in image.data() {
        hist[v as usize] += 1;
    }
    let total = image.data().len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(v, &n)| v as f64 * n as f64).sum();
    let mut best_t = 0u8;
    let mut best_var = -1.0f64;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for t in 1..=255usize {
        // class 0: values < t, class 1: values >= t
        w0 += hist[t - 1] as f64;
        sum0 += (t - 1) as f64 * hist[t - 1] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (total_sum - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    if best_var < 0.0 {
        // constant image: threshold at that value
        return image.data().first().copied().unwrap_or(0);
    }
    best_t
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offs = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                offs.push((dy, dx));
            }
        }
    }
    offs
}

fn erode(mask: &BinaryMask, offs: &[(isize, isize)]) -> BinaryMask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut out = BinaryMask::filled(mask.width(), mask.height(), false);
    for r in 0..h {
        for c in 0..w {
            let mut all = true;
            for &(dy, dx) in offs {
                let (rr, cc) = (r + dy, c + dx);
                if rr < 0 || rr >= h || cc < 0 || cc >= w || !mask.get(rr as usize, cc as usize) {
                    all = false;
                    break;
                }
            }
            if all {
                out.set(r as usize, c as usize, true);
            }
        }
    }
    out
}

fn dilate(mask: &BinaryMask, offs: &[(isize, isize)]) -> BinaryMask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut out = BinaryMask::filled(mask.width(), mask.height(), false);
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r as usize, c as usize) {
                continue;
            }
            for &(dy, dx) in offs {
                let (rr, cc) = (r + dy, c + dx);
                if rr >= 0 && rr < h && cc >= 0 && cc < w {
                    out.set(rr as usize, cc as usize, true);
                }
            }
        }
    }
    out
}

/// Morphological opening with a disk structuring element.
pub fn open_disk(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let offs = disk_offsets(radius);
    dilate(&erode(mask, &offs), &offs)
}

/// Separate thick projection artifacts (shadows of large superficial
/// vessels) from the capillary mask. The artifact mask is the opening of
/// the vessel mask with a disk of the given radius; only structures
/// thicker than ~2 radii survive it.
pub fn remove_projection_artifacts(mask: &BinaryMask, radius: usize) -> (BinaryMask, BinaryMask) {
    let artifact = open_disk(mask, radius);
    let mut cleaned = mask.clone();
    for (c, &a) in cleaned.data_mut().iter_mut().zip(artifact.data()) {
        if a {
            *c = false;
        }
    }
    (cleaned, artifact)
}
