//! COCO-convention average precision and recall.
//!
//! Matching and accumulation follow the reference tooling: per image and
//! category, detections are taken in descending score order and each claims
//! the unmatched ground truth with the highest IoU at or above the threshold;
//! precision is made monotone and sampled at 101 recall points.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// `[x1, y1, x2, y2]` in pixels.
pub type BBox = [f64; 4];

pub const IOU_THRESHOLDS: usize = 10;
pub const RECALL_POINTS: usize = 101;
pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_AREA: f64 = 96.0 * 96.0;
/// Reported for metrics whose bucket holds no ground truth.
pub const EMPTY: f64 = -1.0;

/// IoU threshold `i` of `0.50:0.05:0.95`.
pub fn iou_threshold(i: usize) -> f64 {
    (50 + 5 * i) as f64 / 100.0
}

pub fn area(b: &BBox) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
}

/// Result of matching one image's detections at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Index of the matched ground truth per detection.
    pub det_to_gt: Vec<Option<usize>>,
    /// Detections matched to ignored ground truth are neither TP nor FP.
    pub det_ignored: Vec<bool>,
}

impl Matching {
    pub fn is_tp(&self, d: usize) -> bool {
        self.det_to_gt[d].is_some() && !self.det_ignored[d]
    }
}

/// Greedy one-to-one matching.
///
/// `dets` must already be in descending score order. Non-ignored ground truth
/// is always preferred; among candidates the highest IoU wins, ties going to
/// the lower ground-truth index.
pub fn match_greedy(dets: &[BBox], gts: &[BBox], gt_ignored: &[bool], iou_thresh: f64) -> Matching {
    let thresh = iou_thresh.min(1.0 - 1e-10);
    let mut gt_taken = vec![false; gts.len()];
    let mut det_to_gt = vec![None; dets.len()];
    let mut det_ignored = vec![false; dets.len()];
    for (d, db) in dets.iter().enumerate() {
        let mut best: Option<(bool, f64, usize)> = None;
        for (g, gb) in gts.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let v = iou(db, gb);
            if v < thresh {
                continue;
            }
            let cand = (!gt_ignored[g], v, g);
            let better = match best {
                None => true,
                Some((keep, bv, _)) => (cand.0, cand.1) > (keep, bv),
            };
            if better {
                best = Some(cand);
            }
        }
        if let Some((_, _, g)) = best {
            gt_taken[g] = true;
            det_to_gt[d] = Some(g);
            det_ignored[d] = gt_ignored[g];
        }
    }
    Matching { det_to_gt, det_ignored }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];

    pub fn contains(self, a: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => a < SMALL_AREA,
            AreaRange::Medium => (SMALL_AREA..MEDIUM_AREA).contains(&a),
            AreaRange::Large => a >= MEDIUM_AREA,
        }
    }
}

/// Percentages; [`EMPTY`] for buckets without ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub ar100: f64,
    pub ar_small: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
}

impl MetricReport {
    pub const HEADERS: [&'static str; 12] =
        ["AP", "AP50", "AP75", "APs", "APm", "APl", "AR1", "AR10", "AR100", "ARs", "ARm", "ARl"];

    pub fn values(&self) -> [f64; 12] {
        [
            self.ap,
            self.ap50,
            self.ap75,
            self.ap_small,
            self.ap_medium,
            self.ap_large,
            self.ar1,
            self.ar10,
            self.ar100,
            self.ar_small,
            self.ar_medium,
            self.ar_large,
        ]
    }

    /// Aligned table with one optional leading label column.
    pub fn table(rows: &[(String, MetricReport)]) -> String {
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<label_w$}", "method");
        for h in Self::HEADERS {
            out.push_str(&format!(" {h:>6}"));
        }
        out.push('\n');
        for (label, r) in rows {
            out.push_str(&format!("{label:<label_w$}"));
            for v in r.values() {
                out.push_str(&format!(" {v:>6.1}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        Self::table(&[("result".to_string(), *self)])
    }
}

struct ImageEval {
    scores: Vec<f64>,
    /// Per threshold: TP flag per detection, ignore flag per detection.
    tp: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    n_gt: usize,
}

fn evaluate_image(dets: &[&Detection], gts: &[&GroundTruth], range: AreaRange, max_dets: usize) -> ImageEval {
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    let gt_ignored_raw: Vec<bool> = gts.iter().map(|g| !range.contains(area(&g.bbox))).collect();
    // non-ignored first, stable
    gt_order.sort_by_key(|&i| gt_ignored_raw[i]);
    let gt_boxes: Vec<BBox> = gt_order.iter().map(|&i| gts[i].bbox).collect();
    let gt_ignored: Vec<bool> = gt_order.iter().map(|&i| gt_ignored_raw[i]).collect();

    let mut det_order: Vec<usize> = (0..dets.len()).collect();
    det_order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    det_order.truncate(max_dets);
    let det_boxes: Vec<BBox> = det_order.iter().map(|&i| dets[i].bbox).collect();
    let det_out_of_range: Vec<bool> = det_boxes.iter().map(|b| !range.contains(area(b))).collect();

    let mut tp = Vec::with_capacity(IOU_THRESHOLDS);
    let mut ignored = Vec::with_capacity(IOU_THRESHOLDS);
    for t in 0..IOU_THRESHOLDS {
        let m = match_greedy(&det_boxes, &gt_boxes, &gt_ignored, iou_threshold(t));
        tp.push((0..det_boxes.len()).map(|d| m.is_tp(d)).collect());
        ignored.push(
            (0..det_boxes.len())
                .map(|d| m.det_ignored[d] || (m.det_to_gt[d].is_none() && det_out_of_range[d]))
                .collect(),
        );
    }
    ImageEval {
        scores: det_order.iter().map(|&i| dets[i].score).collect(),
        tp,
        ignored,
        n_gt: gt_ignored.iter().filter(|&&i| !i).count(),
    }
}

/// `(AP per threshold, recall per threshold)`, or `None` without ground truth.
fn accumulate(images: &[ImageEval]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n_gt: usize = images.iter().map(|e| e.n_gt).sum();
    if n_gt == 0 {
        return None;
    }
    // concatenation in image order, then a stable sort by score
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in images.iter().enumerate() {
        for (d, &s) in e.scores.iter().enumerate() {
            entries.push((s, i, d));
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut aps = Vec::with_capacity(IOU_THRESHOLDS);
    let mut recalls = Vec::with_capacity(IOU_THRESHOLDS);
    for t in 0..IOU_THRESHOLDS {
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut rc = Vec::new();
        let mut pr = Vec::new();
        for &(_, i, d) in &entries {
            if images[i].ignored[t][d] {
                continue;
            }
            if images[i].tp[t][d] {
                tp += 1;
            } else {
                fp += 1;
            }
            rc.push(tp as f64 / n_gt as f64);
            pr.push(tp as f64 / (tp + fp) as f64);
        }
        recalls.push(rc.last().copied().unwrap_or(0.0));
        for k in (1..pr.len()).rev() {
            if pr[k] > pr[k - 1] {
                pr[k - 1] = pr[k];
            }
        }
        let mut sum = 0.0;
        for r in 0..RECALL_POINTS {
            let target = r as f64 / 100.0;
            let k = rc.partition_point(|&v| v < target);
            if k < pr.len() {
                sum += pr[k];
            }
        }
        aps.push(sum / RECALL_POINTS as f64);
    }
    Some((aps, recalls))
}

fn mean_or_empty(values: &[f64]) -> f64 {
    if values.is_empty() {
        EMPTY
    } else {
        100.0 * values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Full AP/AR suite. Image order does not matter: images are processed in
/// ascending id order.
pub fn compute_metrics(dets: &[Detection], gts: &[GroundTruth], max_dets: usize) -> MetricReport {
    let image_ids: BTreeSet<u64> = dets.iter().map(|d| d.image_id).chain(gts.iter().map(|g| g.image_id)).collect();
    let categories: BTreeSet<u64> = gts.iter().map(|g| g.category_id).chain(dets.iter().map(|d| d.category_id)).collect();
    let mut det_by: BTreeMap<(u64, u64), Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        det_by.entry((d.category_id, d.image_id)).or_default().push(d);
    }
    let mut gt_by: BTreeMap<(u64, u64), Vec<&GroundTruth>> = BTreeMap::new();
    for g in gts {
        gt_by.entry((g.category_id, g.image_id)).or_default().push(g);
    }

    // (range, max_dets) → per-category accumulations
    let summarize = |range: AreaRange, cap: usize| -> Vec<(Vec<f64>, Vec<f64>)> {
        categories
            .iter()
            .filter_map(|&c| {
                let evals: Vec<ImageEval> = image_ids
                    .iter()
                    .map(|&i| {
                        let d = det_by.get(&(c, i)).map(Vec::as_slice).unwrap_or(&[]);
                        let g = gt_by.get(&(c, i)).map(Vec::as_slice).unwrap_or(&[]);
                        evaluate_image(d, g, range, cap)
                    })
                    .collect();
                accumulate(&evals)
            })
            .collect()
    };
    let ap_at = |acc: &[(Vec<f64>, Vec<f64>)], t: Option<usize>| -> f64 {
        let vals: Vec<f64> = acc
            .iter()
            .flat_map(|(aps, _)| match t {
                Some(t) => vec![aps[t]],
                None => aps.clone(),
            })
            .collect();
        mean_or_empty(&vals)
    };
    let ar = |acc: &[(Vec<f64>, Vec<f64>)]| -> f64 {
        let vals: Vec<f64> = acc.iter().flat_map(|(_, r)| r.clone()).collect();
        mean_or_empty(&vals)
    };

    let all = summarize(AreaRange::All, max_dets);
    let small = summarize(AreaRange::Small, max_dets);
    let medium = summarize(AreaRange::Medium, max_dets);
    let large = summarize(AreaRange::Large, max_dets);
    MetricReport {
        ap: ap_at(&all, None),
        ap50: ap_at(&all, Some(0)),
        ap75: ap_at(&all, Some(5)),
        ap_small: ap_at(&small, None),
        ap_medium: ap_at(&medium, None),
        ap_large: ap_at(&large, None),
        ar1: ar(&summarize(AreaRange::All, 1.min(max_dets))),
        ar10: ar(&summarize(AreaRange::All, 10.min(max_dets))),
        ar100: ar(&all),
        ar_small: ar(&small),
        ar_medium: ar(&medium),
        ar_large: ar(&large),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(image_id: u64, bbox: BBox, score: f64) -> Detection {
        Detection { image_id, category_id: 1, bbox, score }
    }

    fn gt(image_id: u64, bbox: BBox) -> GroundTruth {
        GroundTruth { image_id, category_id: 1, bbox }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&[0.0, 0.0, 2.0, 2.0], &[0.0, 0.0, 2.0, 2.0]), 1.0);
        assert_eq!(iou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]), 0.0);
        assert!((iou(&[0.0, 0.0, 2.0, 2.0], &[1.0, 1.0, 3.0, 3.0]) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn thresholds() {
        let t: Vec<f64> = (0..IOU_THRESHOLDS).map(iou_threshold).collect();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[4], 0.7);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn one_to_one() {
        let g = [[0.0, 0.0, 10.0, 10.0]];
        let m = match_greedy(&[[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 9.0]], &g, &[false], 0.5);
        assert_eq!(m.det_to_gt, vec![Some(0), None]);
        let m = match_greedy(&[[0.0, 0.0, 10.0, 6.0]], &g, &[false], 0.5);
        assert!(m.is_tp(0));
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![gt(1, [0.0, 0.0, 40.0, 40.0]), gt(2, [5.0, 5.0, 20.0, 25.0])];
        let dets: Vec<Detection> = gts.iter().map(|g| det(g.image_id, g.bbox, 1.0)).collect();
        let r = compute_metrics(&dets, &gts, 100);
        assert_eq!((r.ap, r.ap50, r.ap75, r.ar1, r.ar10, r.ar100), (100.0, 100.0, 100.0, 100.0, 100.0, 100.0));
        assert_eq!((r.ap_small, r.ap_medium, r.ap_large), (100.0, 100.0, EMPTY));
        let r = compute_metrics(&[], &gts, 100);
        assert_eq!((r.ap, r.ar100), (0.0, 0.0));
    }

    #[test]
    fn hand_case_iou_072() {
        // 10x10 gt, det 10x7.2 inside it: IoU = 0.72
        let r = compute_metrics(&[det(1, [0.0, 0.0, 10.0, 7.2], 0.9)], &[gt(1, [0.0, 0.0, 10.0, 10.0])], 100);
        assert_eq!(r.ap50, 100.0);
        assert_eq!(r.ap75, 0.0);
        assert!((r.ap - 50.0).abs() < 1e-12, "{}", r.ap);
    }

    #[test]
    fn table_has_twelve_columns() {
        let t = MetricReport::table(&[("SAC".into(), compute_metrics(&[], &[gt(1, [0.0, 0.0, 1.0, 1.0])], 100))]);
        assert_eq!(t.lines().next().unwrap().split_whitespace().count(), 13);
    }
}
