//! Per-location training targets.

use crate::error::{CoreError, Result};

/// Upper bounds of the regression ranges at an 800-pixel input.
pub const RANGE_BOUNDS_800: [f64; 4] = [64.0, 128.0, 256.0, 512.0];

/// `(lo, hi]` range of `max(l, t, r, b)` for each level, scaled to the input.
pub fn level_ranges(input_size: usize) -> [(f64, f64); 5] {
    let s = input_size as f64 / 800.0;
    let b = RANGE_BOUNDS_800.map(|v| v * s);
    [(0.0, b[0]), (b[0], b[1]), (b[1], b[2]), (b[2], b[3]), (b[3], f64::INFINITY)]
}

pub fn centerness(ltrb: [f64; 4]) -> f64 {
    let [l, t, r, b] = ltrb;
    ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt()
}

/// Ground-truth box in network-input pixels with a zero-based class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: [f64; 4],
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// 0 for background, otherwise class + 1.
    pub cls: Vec<usize>,
    pub reg: Vec<[f64; 4]>,
    pub ctr: Vec<f64>,
}

impl LevelTargets {
    pub fn is_pos(&self, i: usize) -> bool {
        self.cls[i] > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    pub levels: Vec<LevelTargets>,
}

impl TargetMap {
    pub fn num_pos(&self) -> usize {
        self.levels.iter().map(|l| l.cls.iter().filter(|&&c| c > 0).count()).sum()
    }
}

/// FCOS assignment: a location is positive for a box when it lies strictly
/// inside it and the largest distance to an edge falls in the level's range.
/// Locations claimed by several boxes take the smallest one.
pub fn assign_targets(
    gts: &[GtBox],
    sizes: &[(usize, usize)],
    strides: &[usize],
    input_size: usize,
) -> Result<TargetMap> {
    for g in gts {
        let b = g.bbox;
        if !b.iter().all(|v| v.is_finite()) || b[2] <= b[0] || b[3] <= b[1] {
            return Err(CoreError::invalid(format!("degenerate ground-truth box {b:?}")));
        }
    }
    let ranges = level_ranges(input_size);
    let mut levels = Vec::with_capacity(sizes.len());
    for (l, (&(h, w), &stride)) in sizes.iter().zip(strides).enumerate() {
        let (lo, hi) = ranges[l.min(4)];
        let mut t = LevelTargets {
            stride,
            height: h,
            width: w,
            cls: vec![0; h * w],
            reg: vec![[0.0; 4]; h * w],
            ctr: vec![0.0; h * w],
        };
        for y in 0..h {
            let cy = stride as f64 * (y as f64 + 0.5);
            for x in 0..w {
                let cx = stride as f64 * (x as f64 + 0.5);
                let mut best: Option<(f64, usize, [f64; 4])> = None;
                for (gi, g) in gts.iter().enumerate() {
                    let d = [cx - g.bbox[0], cy - g.bbox[1], g.bbox[2] - cx, g.bbox[3] - cy];
                    if d.iter().any(|&v| v <= 0.0) {
                        continue;
                    }
                    let m = d.iter().cloned().fold(0.0, f64::max);
                    if !(m > lo && m <= hi) {
                        continue;
                    }
                    let area = (g.bbox[2] - g.bbox[0]) * (g.bbox[3] - g.bbox[1]);
                    if best.is_none_or(|(a, _, _)| area < a) {
                        best = Some((area, gi, d));
                    }
                }
                if let Some((_, gi, d)) = best {
                    let i = y * w + x;
                    t.cls[i] = gts[gi].class + 1;
                    t.reg[i] = d;
                    t.ctr[i] = centerness(d);
                }
            }
        }
        levels.push(t);
    }
    Ok(TargetMap { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pyramid_sizes, STRIDES};

    fn sizes(input: usize) -> Vec<(usize, usize)> {
        pyramid_sizes(input).iter().map(|&s| (s, s)).collect()
    }

    #[test]
    fn centerness_examples() {
        assert_eq!(centerness([5.0, 5.0, 5.0, 5.0]), 1.0);
        assert!((centerness([1.0, 2.0, 3.0, 2.0]) - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn forty_pixel_box_lands_on_stride_8_only() {
        let g = GtBox { bbox: [200.0, 200.0, 240.0, 240.0], class: 0 };
        let t = assign_targets(&[g], &sizes(800), &STRIDES, 800).unwrap();
        let per_level: Vec<usize> = t.levels.iter().map(|l| l.cls.iter().filter(|&&c| c > 0).count()).collect();
        assert!(per_level[0] > 0);
        assert!(per_level[1..].iter().all(|&n| n == 0), "{per_level:?}");
    }

    #[test]
    fn smallest_box_wins_overlap() {
        let big = GtBox { bbox: [0.0, 0.0, 100.0, 100.0], class: 0 };
        let small = GtBox { bbox: [40.0, 40.0, 60.0, 60.0], class: 0 };
        let t = assign_targets(&[big, small], &[(100, 100)], &[1], 100_000).unwrap();
        let i = 50 * 100 + 50;
        assert_eq!(t.levels[0].reg[i], [10.5, 10.5, 9.5, 9.5]);
    }

    #[test]
    fn no_boxes_no_positives() {
        assert_eq!(assign_targets(&[], &sizes(128), &STRIDES, 128).unwrap().num_pos(), 0);
    }

    #[test]
    fn degenerate_box_rejected() {
        let g = GtBox { bbox: [5.0, 5.0, 5.0, 9.0], class: 0 };
        assert!(assign_targets(&[g], &sizes(128), &STRIDES, 128).is_err());
    }
}
