//! Connected-component labeling over boolean rasters.

use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Label the `true` pixels of `mask` (after applying `invert`). Labels are
/// dense from 1; unlabeled pixels are 0. BFS flood fill.
pub fn label_components(mask: &BinaryMask, invert: bool, conn: Connectivity) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let in_set = |i: usize| mask.data()[i] != invert;
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..w * h {
        if labels[start] != 0 || !in_set(start) {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let mut visit = |rr: usize, cc: usize| {
                let j = rr * w + cc;
                if labels[j] == 0 && in_set(j) {
                    labels[j] = next;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < h {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < w {
                visit(r, c + 1);
            }
            if conn == Connectivity::Eight {
                if r > 0 && c > 0 {
                    visit(r - 1, c - 1);
                }
                if r > 0 && c + 1 < w {
                    visit(r - 1, c + 1);
                }
                if r + 1 < h && c > 0 {
                    visit(r + 1, c - 1);
                }
                if r + 1 < h && c + 1 < w {
                    visit(r + 1, c + 1);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Pixel counts per label (index 0 unused).
pub fn component_areas(labels: &[u32], count: usize) -> Vec<usize> {
    let mut areas = vec![0usize; count + 1];
    for &l in labels {
        areas[l as usize] += 1;
    }
    areas
}
