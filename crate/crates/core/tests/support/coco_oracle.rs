//! Slow reference metrics: explicit enumeration of matchings and direct
//! evaluation of the interpolated precision definition.

use rvf_core::evaluation::{Detection, GroundTruth, MetricReport};

fn box_area(b: &[f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

fn overlap(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = box_area(a) + box_area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn in_range(bucket: usize, a: f64) -> bool {
    match bucket {
        0 => true,
        1 => a < 1024.0,
        2 => (1024.0..9216.0).contains(&a),
        _ => a >= 9216.0,
    }
}

/// Every partial injective assignment of `n_det` detections onto `n_gt` ground truths.
fn assignments(n_det: usize, n_gt: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n_det {
        let mut next = Vec::new();
        for a in &out {
            next.push([a.clone(), vec![None]].concat());
            for g in 0..n_gt {
                if !a.contains(&Some(g)) {
                    next.push([a.clone(), vec![Some(g)]].concat());
                }
            }
        }
        out = next;
    }
    out
}

struct Outcome {
    score: f64,
    tp: bool,
    ignored: bool,
}

/// Best assignment under the lexicographic per-detection preference: matched to
/// a counted box, then matched to an ignored box, then unmatched; higher IoU
/// first; lower ground-truth index first.
fn image_outcomes(dets: &[&Detection], gts: &[&GroundTruth], bucket: usize, thr: f64) -> Vec<Outcome> {
    let gt_ign: Vec<bool> = gts.iter().map(|g| !in_range(bucket, box_area(&g.bbox))).collect();
    let key = |a: &Vec<Option<usize>>| -> Option<Vec<(u8, f64, i64)>> {
        let mut k = Vec::new();
        for (d, m) in a.iter().enumerate() {
            match *m {
                None => k.push((0, 0.0, 0)),
                Some(g) => {
                    let v = overlap(&dets[d].bbox, &gts[g].bbox);
                    if v < thr.min(1.0 - 1e-10) {
                        return None;
                    }
                    k.push((if gt_ign[g] { 1 } else { 2 }, v, -(g as i64)));
                }
            }
        }
        Some(k)
    };
    let mut best: Option<(Vec<(u8, f64, i64)>, Vec<Option<usize>>)> = None;
    for a in assignments(dets.len(), gts.len()) {
        let Some(k) = key(&a) else { continue };
        let better = match &best {
            None => true,
            Some((bk, _)) => k.iter().zip(bk).map(|(x, y)| x.partial_cmp(y).unwrap()).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Greater),
        };
        if better {
            best = Some((k, a));
        }
    }
    let assign = best.map(|b| b.1).unwrap_or_else(|| vec![None; dets.len()]);
    dets.iter()
        .zip(&assign)
        .map(|(d, m)| match m {
            Some(g) => Outcome { score: d.score, tp: !gt_ign[*g], ignored: gt_ign[*g] },
            None => Outcome { score: d.score, tp: false, ignored: !in_range(bucket, box_area(&d.bbox)) },
        })
        .collect()
}

/// `(AP, recall)` for one category at one threshold, or `None` without counted ground truth.
fn category_at(dets: &[Detection], gts: &[GroundTruth], bucket: usize, cap: usize, thr: f64) -> Option<(f64, f64)> {
    let mut ids: Vec<u64> = dets.iter().map(|d| d.image_id).chain(gts.iter().map(|g| g.image_id)).collect();
    ids.sort();
    ids.dedup();
    let mut outcomes = Vec::new();
    let mut n_pos = 0;
    for id in ids {
        let mut ds: Vec<&Detection> = dets.iter().filter(|d| d.image_id == id).collect();
        ds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        ds.truncate(cap);
        let gs: Vec<&GroundTruth> = gts.iter().filter(|g| g.image_id == id).collect();
        n_pos += gs.iter().filter(|g| in_range(bucket, box_area(&g.bbox))).count();
        outcomes.extend(image_outcomes(&ds, &gs, bucket, thr));
    }
    if n_pos == 0 {
        return None;
    }
    outcomes.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    for o in outcomes.iter().filter(|o| !o.ignored) {
        if o.tp {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        points.push((tp / n_pos as f64, tp / (tp + fp)));
    }
    let ap = (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0;
    Some((ap, tp / n_pos as f64))
}

fn mean_pct(v: &[f64]) -> f64 {
    if v.is_empty() {
        -1.0
    } else {
        100.0 * v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn brute_force_metrics(dets: &[Detection], gts: &[GroundTruth], max_dets: usize) -> MetricReport {
    let mut cats: Vec<u64> = dets.iter().map(|d| d.category_id).chain(gts.iter().map(|g| g.category_id)).collect();
    cats.sort();
    cats.dedup();
    let thresholds: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    let collect = |bucket: usize, cap: usize, only: Option<usize>, recall: bool| -> f64 {
        let mut vals = Vec::new();
        for &c in &cats {
            let d: Vec<Detection> = dets.iter().filter(|x| x.category_id == c).copied().collect();
            let g: Vec<GroundTruth> = gts.iter().filter(|x| x.category_id == c).copied().collect();
            for (t, &thr) in thresholds.iter().enumerate() {
                if only.is_some_and(|o| o != t) {
                    continue;
                }
                if let Some((ap, rc)) = category_at(&d, &g, bucket, cap, thr) {
                    vals.push(if recall { rc } else { ap });
                }
            }
        }
        mean_pct(&vals)
    };
    MetricReport {
        ap: collect(0, max_dets, None, false),
        ap50: collect(0, max_dets, Some(0), false),
        ap75: collect(0, max_dets, Some(5), false),
        ap_small: collect(1, max_dets, None, false),
        ap_medium: collect(2, max_dets, None, false),
        ap_large: collect(3, max_dets, None, false),
        ar1: collect(0, 1.min(max_dets), None, true),
        ar10: collect(0, 10.min(max_dets), None, true),
        ar100: collect(0, max_dets, None, true),
        ar_small: collect(1, max_dets, None, true),
        ar_medium: collect(2, max_dets, None, true),
        ar_large: collect(3, max_dets, None, true),
    }
}
