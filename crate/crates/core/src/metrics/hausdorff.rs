use super::mask::LabelMask;

/// Squared Euclidean distance from every pixel to the nearest `true` pixel
/// of `set`, exact in integers. `None` when `set` is empty.
///
/// Column pass computes vertical gaps, row pass minimises
/// `(c - c')^2 + gap(c')^2` over all columns: O(h * w^2).
pub fn squared_distance_map(set: &[bool], h: usize, w: usize) -> Option<Vec<u64>> {
    if !set.iter().any(|&b| b) {
        return None;
    }
    const INF: u64 = u64::MAX / 4;
    let mut gap = vec![INF; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if set[r * w + c] {
                last = Some(r);
            }
            if let Some(l) = last {
                gap[r * w + c] = (r - l) as u64;
            }
        }
        let mut next: Option<usize> = None;
        for r in (0..h).rev() {
            if set[r * w + c] {
                next = Some(r);
            }
            if let Some(n) = next {
                gap[r * w + c] = gap[r * w + c].min((n - r) as u64);
            }
        }
    }
    let mut out = vec![0u64; h * w];
    for r in 0..h {
        let row = &gap[r * w..(r + 1) * w];
        for c in 0..w {
            let mut best = u64::MAX;
            for (c2, &g) in row.iter().enumerate() {
                if g == INF {
                    continue;
                }
                let dc = c.abs_diff(c2) as u64;
                best = best.min(dc * dc + g * g);
            }
            out[r * w + c] = best;
        }
    }
    Some(out)
}

/// Directed distances from each pixel of `from` to the nearest pixel of
/// `to`, ascending.
fn directed(from: &[bool], to_dist: &[u64]) -> Vec<f64> {
    let mut d: Vec<u64> = from
        .iter()
        .zip(to_dist)
        .filter_map(|(&f, &d)| f.then_some(d))
        .collect();
    d.sort_unstable();
    d.into_iter().map(|v| (v as f64).sqrt()).collect()
}

/// Nearest-rank percentile of an ascending, non-empty slice.
pub fn nearest_rank(sorted: &[f64], percent: u32) -> f64 {
    let n = sorted.len();
    let rank = (percent as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

fn hausdorff(truth: &LabelMask, pred: &LabelMask, class: u8, percent: u32) -> Option<f64> {
    assert_eq!((truth.h, truth.w), (pred.h, pred.w), "mask shapes differ");
    let (h, w) = (truth.h, truth.w);
    let y = truth.class_mask(class);
    let p = pred.class_mask(class);
    let dy = squared_distance_map(&y, h, w)?;
    let dp = squared_distance_map(&p, h, w)?;
    let a = nearest_rank(&directed(&y, &dp), percent);
    let b = nearest_rank(&directed(&p, &dy), percent);
    Some(a.max(b))
}

/// Symmetric Hausdorff distance in pixels over the class foregrounds.
/// `None` (undefined) when either set is empty.
pub fn hd100(truth: &LabelMask, pred: &LabelMask, class: u8) -> Option<f64> {
    hausdorff(truth, pred, class, 100)
}

/// 95th-percentile (nearest-rank) of each directed distance multiset,
/// then the larger of the two.
pub fn hd95(truth: &LabelMask, pred: &LabelMask, class: u8) -> Option<f64> {
    hausdorff(truth, pred, class, 95)
}
