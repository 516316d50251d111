//! Synthetic angiography phantoms: branching superficial-style trees and
//! lobular deep-style meshes, with speckle rendering and frame averaging.
//! Supplies paired (noisy single frame, averaged image, exact truth mask)
//! data for training and verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::quantify::Plexus;
use crate::raster::{BinaryMask, GrayImage};

/// Full-width horizontal projection bands this thick survive a radius-6
/// disk opening with high recall.
const BAND_THICKNESS: usize = 16;

const VESSEL_LEVEL: f64 = 200.0;
const BACKGROUND_LEVEL: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub plexus_style: Plexus,
    pub size: (usize, usize),
    pub seed: u64,
    pub vessel_density_target: f64,
    pub speckle_snr: f64,
    pub frames_to_average: usize,
    pub faz_radius_px: usize,
    pub projection_band_count: usize,
    /// Nonperfusion patches: (center row, center col, radius).
    pub dropout_lesions: Vec<(usize, usize, usize)>,
}

impl PhantomSpec {
    pub fn new(plexus_style: Plexus, height: usize, width: usize, seed: u64) -> Self {
        PhantomSpec {
            plexus_style,
            size: (height, width),
            seed,
            vessel_density_target: match plexus_style {
                Plexus::Scp => 0.30,
                Plexus::Dvc => 0.35,
            },
            speckle_snr: 3.0,
            frames_to_average: 8,
            faz_radius_px: height.min(width) / 12,
            projection_band_count: 0,
            dropout_lesions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h < 16 || w < 16 {
            return Err(Error::invalid(format!("phantom size {h}x{w} too small")));
        }
        if !(0.0..1.0).contains(&self.vessel_density_target) || self.vessel_density_target == 0.0 {
            return Err(Error::invalid(format!(
                "vessel density target {} outside (0,1)",
                self.vessel_density_target
            )));
        }
        if self.speckle_snr <= 0.0 {
            return Err(Error::invalid(format!("speckle SNR {} must be positive", self.speckle_snr)));
        }
        if self.frames_to_average == 0 {
            return Err(Error::invalid("frames_to_average must be positive"));
        }
        if self.projection_band_count > 0 && self.plexus_style != Plexus::Dvc {
            return Err(Error::invalid("projection bands apply to the deep plexus only"));
        }
        Ok(())
    }
}

/// Ground truth: the vessel mask (projection bands included) and the band
/// pixels flagged separately so artifact removal can be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub vessels: BinaryMask,
    pub projection_bands: BinaryMask,
}

fn stamp_disk(mask: &mut BinaryMask, r0: f64, c0: f64, radius: f64, value: bool) {
    let (w, h) = (mask.width(), mask.height());
    let rr = radius.ceil() as isize;
    let (ir, ic) = (r0.round() as isize, c0.round() as isize);
    for dr in -rr..=rr {
        for dc in -rr..=rr {
            let (r, c) = (ir + dr, ic + dc);
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                continue;
            }
            let dy = r as f64 - r0;
            let dx = c as f64 - c0;
            if dy * dy + dx * dx <= radius * radius {
                mask.set(r as usize, c as usize, value);
            }
        }
    }
}

fn stamp_segment(mask: &mut BinaryMask, r0: f64, c0: f64, r1: f64, c1: f64, half_width: f64) {
    let len = ((r1 - r0).hypot(c1 - c0)).max(1.0);
    let steps = (len * 2.0).ceil() as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        stamp_disk(mask, r0 + (r1 - r0) * t, c0 + (c1 - c0) * t, half_width, true);
    }
}

/// Recursive bifurcating tree; vessel half-width shrinks with branch depth.
#[allow(clippy::too_many_arguments)]
fn grow_branch(
    mask: &mut BinaryMask,
    rng: &mut ChaCha8Rng,
    r: f64,
    c: f64,
    angle: f64,
    depth: usize,
    max_depth: usize,
    seg_len: f64,
    width0: f64,
) {
    if depth > max_depth {
        return;
    }
    let half_width = (width0 - depth as f64 * 0.35).max(0.5);
    let jitter = rng.gen_range(-0.25..0.25);
    let a = angle + jitter;
    let len = seg_len * rng.gen_range(0.8..1.2);
    let (r1, c1) = (r + len * a.sin(), c + len * a.cos());
    stamp_segment(mask, r, c, r1, c1, half_width);
    if r1 < -seg_len || c1 < -seg_len || r1 > mask.height() as f64 + seg_len || c1 > mask.width() as f64 + seg_len {
        return;
    }
    let split = rng.gen_range(0.35..0.7);
    grow_branch(mask, rng, r1, c1, a - split, depth + 1, max_depth, len * 0.85, width0);
    grow_branch(mask, rng, r1, c1, a + split, depth + 1, max_depth, len * 0.85, width0);
}

fn scp_truth(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> BinaryMask {
    let (h, w) = spec.size;
    let mut mask = BinaryMask::filled(w, h, false);
    let min_dim = h.min(w) as f64;
    let width0 = (min_dim / 90.0).clamp(0.9, 2.2);
    let seg_len = min_dim / 7.0;
    // add trees from random border points until the density target is hit
    for _ in 0..400 {
        if mask.density() >= spec.vessel_density_target {
            break;
        }
        let side = rng.gen_range(0..4u8);
        let (r, c, angle) = match side {
            0 => (0.0, rng.gen_range(0.0..w as f64), std::f64::consts::FRAC_PI_2),
            1 => (h as f64 - 1.0, rng.gen_range(0.0..w as f64), -std::f64::consts::FRAC_PI_2),
            2 => (rng.gen_range(0.0..h as f64), 0.0, 0.0),
            _ => (rng.gen_range(0.0..h as f64), w as f64 - 1.0, std::f64::consts::PI),
        };
        let angle = angle + rng.gen_range(-0.5..0.5);
        // per-tree caliber and reach vary, as real vessel trees do; this
        // also spreads the inter-capillary-area size distribution
        let tree_width = width0 * rng.gen_range(0.7..1.6);
        let tree_seg = seg_len * rng.gen_range(0.7..1.4);
        grow_branch(&mut mask, rng, r, c, angle, 0, 6, tree_seg, tree_width);
    }
    mask
}

/// Nearest-site labels via spatially hashed sites.
fn voronoi_labels(h: usize, w: usize, sites: &[(f64, f64)]) -> Vec<u32> {
    let cell = ((h * w) as f64 / sites.len() as f64).sqrt().max(1.0);
    let (gh, gw) = ((h as f64 / cell).ceil() as usize + 1, (w as f64 / cell).ceil() as usize + 1);
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); gh * gw];
    for (i, &(sr, sc)) in sites.iter().enumerate() {
        let (br, bc) = ((sr / cell) as usize, (sc / cell) as usize);
        buckets[br.min(gh - 1) * gw + bc.min(gw - 1)].push(i as u32);
    }
    let mut labels = vec![0u32; h * w];
    for r in 0..h {
        for c in 0..w {
            let (br, bc) = ((r as f64 / cell) as usize, (c as f64 / cell) as usize);
            let mut best = u32::MAX;
            let mut best_d = f64::INFINITY;
            // widen the bucket window until a site is found, then by one
            // more ring to guarantee the true nearest is inside
            let mut ring = 1isize;
            loop {
                let mut found = false;
                for dr in -ring..=ring {
                    for dc in -ring..=ring {
                        let (qr, qc) = (br as isize + dr, bc as isize + dc);
                        if qr < 0 || qc < 0 || qr >= gh as isize || qc >= gw as isize {
                            continue;
                        }
                        for &i in &buckets[qr as usize * gw + qc as usize] {
                            let (sr, sc) = sites[i as usize];
                            let d = (r as f64 - sr).powi(2) + (c as f64 - sc).powi(2);
                            if d < best_d {
                                best_d = d;
                                best = i;
                            }
                            found = true;
                        }
                    }
                }
                if found && ring >= 2 {
                    break;
                }
                ring += 1;
                if ring as usize > gh.max(gw) {
                    break;
                }
            }
            labels[r * w + c] = best;
        }
    }
    labels
}

fn dvc_boundary_mask(h: usize, w: usize, sites: &[(f64, f64)], half_width: f64) -> BinaryMask {
    let labels = voronoi_labels(h, w, sites);
    let mut mask = BinaryMask::filled(w, h, false);
    for r in 0..h {
        for c in 0..w {
            let l = labels[r * w + c];
            let edge = (c + 1 < w && labels[r * w + c + 1] != l)
                || (r + 1 < h && labels[(r + 1) * w + c] != l);
            if edge {
                if half_width <= 0.5 {
                    mask.set(r, c, true);
                } else {
                    stamp_disk(&mut mask, r as f64, c as f64, half_width, true);
                }
            }
        }
    }
    mask
}

fn dvc_truth(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> BinaryMask {
    let (h, w) = spec.size;
    let min_dim = h.min(w) as f64;
    let half_width = (min_dim / 130.0).clamp(0.5, 1.8);
    // lobule count adapts to the density target by bisection; boundary
    // density grows monotonically with the number of sites
    let mut lo = 8usize;
    let mut hi = ((h * w) / 12).max(lo + 1);
    let mut best: Option<(f64, BinaryMask)> = None;
    for _ in 0..10 {
        let n = (lo + hi) / 2;
        let mut site_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let sites: Vec<(f64, f64)> = (0..n)
            .map(|_| (site_rng.gen_range(0.0..h as f64), site_rng.gen_range(0.0..w as f64)))
            .collect();
        let mask = dvc_boundary_mask(h, w, &sites, half_width);
        let err = (mask.density() - spec.vessel_density_target).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, mask.clone()));
        }
        if mask.density() < spec.vessel_density_target {
            lo = n + 1;
        } else {
            hi = n.max(lo + 1);
        }
        if lo >= hi {
            break;
        }
    }
    best.unwrap().1
}

/// Deterministic ground-truth mask for the spec: branching trees for the
/// superficial style, lobular mesh for the deep style, optional projection
/// bands flagged separately, central avascular disk and lesions cleared.
pub fn generate_truth(spec: &PhantomSpec) -> Result<PhantomTruth> {
    spec.validate()?;
    let (h, w) = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vessels = match spec.plexus_style {
        Plexus::Scp => scp_truth(spec, &mut rng),
        Plexus::Dvc => dvc_truth(spec, &mut rng),
    };
    let mut bands = BinaryMask::filled(w, h, false);
    for _ in 0..spec.projection_band_count {
        let top = rng.gen_range(0..h.saturating_sub(BAND_THICKNESS).max(1));
        for r in top..(top + BAND_THICKNESS).min(h) {
            for c in 0..w {
                bands.set(r, c, true);
                vessels.set(r, c, true);
            }
        }
    }
    // avascular center and dropout lesions are vessel-free by construction
    let (cr, cc) = ((h / 2) as f64, (w / 2) as f64);
    if spec.faz_radius_px > 0 {
        stamp_disk(&mut vessels, cr, cc, spec.faz_radius_px as f64, false);
        stamp_disk(&mut bands, cr, cc, spec.faz_radius_px as f64, false);
    }
    for &(lr, lc, radius) in &spec.dropout_lesions {
        stamp_disk(&mut vessels, lr as f64, lc as f64, radius as f64, false);
        stamp_disk(&mut bands, lr as f64, lc as f64, radius as f64, false);
    }
    Ok(PhantomTruth { vessels, projection_bands: bands })
}

fn render_one_frame(truth: &BinaryMask, snr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // multiplicative speckle: unit-mean gamma with variance 1/snr^2
    let shape = snr * snr;
    let gamma = Gamma::new(shape, 1.0 / shape).expect("valid gamma parameters");
    truth
        .data()
        .iter()
        .map(|&v| {
            let base = if v { VESSEL_LEVEL } else { BACKGROUND_LEVEL };
            base * gamma.sample(rng)
        })
        .collect()
}

fn to_gray(w: usize, h: usize, values: &[f64]) -> GrayImage {
    let data = values.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::new(w, h, data).expect("matching extents")
}

/// Render one noisy frame and the mean of `frames_to_average` independent
/// frames (the single frame is the first of them). Deterministic under the
/// spec seed.
pub fn render_frames(truth: &BinaryMask, spec: &PhantomSpec) -> Result<(GrayImage, GrayImage)> {
    spec.validate()?;
    let (w, h) = (truth.width(), truth.height());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let mut sum = vec![0.0f64; w * h];
    let mut single = Vec::new();
    for f in 0..spec.frames_to_average {
        let frame = render_one_frame(truth, spec.speckle_snr, &mut rng);
        for (s, v) in sum.iter_mut().zip(&frame) {
            *s += v;
        }
        if f == 0 {
            single = frame;
        }
    }
    let n = spec.frames_to_average as f64;
    for s in sum.iter_mut() {
        *s /= n;
    }
    Ok((to_gray(w, h, &single), to_gray(w, h, &sum)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CohortTag {
    Control,
    DrLike,
}

impl std::fmt::Display for CohortTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CohortTag::Control => "control",
            CohortTag::DrLike => "dr_like",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomItem {
    pub spec: PhantomSpec,
    pub truth: PhantomTruth,
    pub single: GrayImage,
    pub averaged: GrayImage,
    pub tag: CohortTag,
}

/// Generate a cohort from a template spec with per-item derived seeds.
/// Items inherit the template's lesions: a lesion-free template yields a
/// control cohort, a lesioned one a pathology-like cohort.
pub fn generate_dataset(template: &PhantomSpec, count: usize, seed: u64) -> Result<Vec<PhantomItem>> {
    if count == 0 {
        return Err(Error::invalid("cohort count must be at least 1"));
    }
    let tag = if template.dropout_lesions.is_empty() {
        CohortTag::Control
    } else {
        CohortTag::DrLike
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut spec = template.clone();
        spec.seed = seed
            .wrapping_mul(0x2545F4914F6CDD1D)
            .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(i as u64 + 1));
        let truth = generate_truth(&spec)?;
        let (single, averaged) = render_frames(&truth.vessels, &spec)?;
        out.push(PhantomItem { spec, truth, single, averaged, tag });
    }
    Ok(out)
}
