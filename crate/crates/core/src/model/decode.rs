//! Turning head outputs into scored boxes.

use serde::{Deserialize, Serialize};

use super::HeadOutput;
use crate::evaluation::iou;

/// Candidates kept per level before non-maximum suppression.
const PRE_NMS_PER_LEVEL: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    /// Zero-based class index.
    pub class_id: usize,
}

impl DetectionBox {
    pub fn bbox(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Box implied by distances `(l, t, r, b)` at grid cell `(x, y)` of a level.
pub fn decode_location(stride: usize, x: usize, y: usize, ltrb: [f64; 4]) -> [f64; 4] {
    let s = stride as f64;
    let (cx, cy) = (s * (x as f64 + 0.5), s * (y as f64 + 0.5));
    [cx - ltrb[0], cy - ltrb[1], cx + ltrb[2], cy + ltrb[3]]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Greedy per-class suppression; input order breaks score ties.
pub fn nms(mut boxes: Vec<DetectionBox>, iou_thresh: f64) -> Vec<DetectionBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let sorted: Vec<DetectionBox> = order.iter().map(|&i| boxes[i]).collect();
    boxes.clear();
    for cand in sorted {
        let suppressed = boxes
            .iter()
            .any(|k| k.class_id == cand.class_id && iou(&k.bbox(), &cand.bbox()) > iou_thresh);
        if !suppressed {
            boxes.push(cand);
        }
    }
    boxes
}

/// Detections for image `n` of the batch, clipped to `width × height`.
///
/// Score is `sqrt(sigmoid(cls)·sigmoid(centerness))`. Boxes that collapse
/// after clipping are dropped.
pub fn decode_detections(
    head: &HeadOutput,
    n: usize,
    width: f64,
    height: f64,
    score_thresh: f64,
    nms_iou: f64,
    max_dets: usize,
) -> Vec<DetectionBox> {
    let mut all = Vec::new();
    for level in &head.levels {
        let [_, c, h, w] = level.cls.shape().try_into().expect("rank-4 class map");
        let hw = h * w;
        let (cls, reg, ctr) = (level.cls.data(), level.reg.data(), level.ctr.data());
        let mut cands = Vec::new();
        for k in 0..c {
            for i in 0..hw {
                let centerness = sigmoid(ctr[n * hw + i] as f64);
                let score = (sigmoid(cls[(n * c + k) * hw + i] as f64) * centerness).sqrt();
                if score <= score_thresh {
                    continue;
                }
                let ltrb: [f64; 4] = std::array::from_fn(|j| reg[(n * 4 + j) * hw + i] as f64);
                let b = decode_location(level.stride, i % w, i / w, ltrb);
                let b = [b[0].clamp(0.0, width), b[1].clamp(0.0, height), b[2].clamp(0.0, width), b[3].clamp(0.0, height)];
                if !(b[0] < b[2] && b[1] < b[3]) {
                    continue;
                }
                cands.push(DetectionBox { x1: b[0], y1: b[1], x2: b[2], y2: b[3], score, class_id: k });
            }
        }
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        cands.truncate(PRE_NMS_PER_LEVEL);
        all.extend(cands);
    }
    let mut kept = nms(all, nms_iou);
    kept.truncate(max_dets);
    kept
}
