//! Exact Euclidean distance transform (two-pass 1-D parabola method).

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

const INF: f64 = 1e20;

/// 1-D squared-distance transform via the lower envelope of parabolas.
fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * q - 2 * p) as f64;
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Per-pixel squared Euclidean distance to the nearest vessel pixel.
pub fn distance_transform_sq(mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.count_true() == 0 {
        return Err(Error::Quantify("distance transform needs at least one vessel pixel".into()));
    }
    let (w, h) = (mask.width(), mask.height());
    let mut grid: Vec<f64> = mask.data().iter().map(|&v| if v { 0.0 } else { INF }).collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    // columns
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        dt1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    // rows
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        dt1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    Ok(grid)
}

/// Per-pixel Euclidean distance to the nearest vessel pixel; vessel pixels
/// are at distance 0.
pub fn distance_transform(mask: &BinaryMask) -> Result<Vec<f64>> {
    Ok(distance_transform_sq(mask)?.into_iter().map(f64::sqrt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force all-pairs nearest-vessel scan.
    pub(crate) fn brute_force_sq(mask: &BinaryMask) -> Vec<f64> {
        let (w, h) = (mask.width(), mask.height());
        let vessels: Vec<(isize, isize)> = (0..w * h)
            .filter(|&i| mask.data()[i])
            .map(|i| ((i / w) as isize, (i % w) as isize))
            .collect();
        (0..w * h)
            .map(|i| {
                let (r, c) = ((i / w) as isize, (i % w) as isize);
                vessels
                    .iter()
                    .map(|&(vr, vc)| ((r - vr) * (r - vr) + (c - vc) * (c - vc)) as f64)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn corner_source_analytic() {
        let mut m = BinaryMask::filled(3, 3, false);
        m.set(0, 0, true);
        let d = distance_transform(&m).unwrap();
        assert!((d[8] - (8.0f64).sqrt()).abs() < 1e-6); // (2,2): 2*sqrt(2)
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn full_border_center_distance() {
        let mut m = BinaryMask::filled(5, 5, true);
        for r in 1..4 {
            for c in 1..4 {
                m.set(r, c, false);
            }
        }
        let d = distance_transform(&m).unwrap();
        assert_eq!(d[2 * 5 + 2], 2.0);
    }

    #[test]
    fn empty_vessel_set_errors() {
        let m = BinaryMask::filled(4, 4, false);
        assert!(distance_transform(&m).is_err());
    }

    #[test]
    fn matches_all_pairs_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        for _ in 0..30 {
            let mut m = BinaryMask::new(32, 32, (0..1024).map(|_| rng.gen_bool(0.1)).collect()).unwrap();
            if m.count_true() == 0 {
                m.set(5, 7, true);
            }
            let fast = distance_transform_sq(&m).unwrap();
            let slow = brute_force_sq(&m);
            assert_eq!(fast, slow);
        }
    }
}
