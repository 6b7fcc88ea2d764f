//! Focal, GIoU and centerness losses over all pyramid levels.
//!
//! Each loss is a single scalar node whose parents are the per-level head
//! outputs. Gradients are computed alongside the value.

use rvf_tensor::{add, scale, Float, Tensor};
use serde::{Deserialize, Serialize};

use super::targets::TargetMap;
use crate::error::{CoreError, Result};
use crate::model::HeadOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// `None` disables class balancing.
    pub focal_alpha: Option<f64>,
    pub focal_gamma: f64,
    pub lambda_reg: f64,
    pub centerness_loss: bool,
    /// Weight each positive's GIoU term by its centerness target.
    pub centerness_weighted_giou: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal_alpha: Some(0.25),
            focal_gamma: 2.0,
            lambda_reg: 1.0,
            centerness_loss: true,
            centerness_weighted_giou: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.focal_alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(CoreError::invalid(format!("focal_alpha {a} outside [0, 1]")));
            }
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(CoreError::invalid("focal_gamma must be finite and non-negative"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(CoreError::invalid("lambda_reg must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub cls: f64,
    /// Already multiplied by `lambda_reg`.
    pub reg: f64,
    pub centerness: f64,
    pub num_pos: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn entropy(y: f64) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    h(y) + h(1.0 - y)
}

/// Focal loss of one logit and its derivative.
pub fn focal_term(x: f64, positive: bool, alpha: Option<f64>, gamma: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if positive {
        let a = alpha.unwrap_or(1.0);
        let log_p = -softplus(-x);
        let q = 1.0 - p;
        (-a * q.powf(gamma) * log_p, a * q.powf(gamma) * (gamma * p * log_p - q))
    } else {
        let a = alpha.map_or(1.0, |a| 1.0 - a);
        let log_q = -softplus(x);
        (-a * p.powf(gamma) * log_q, a * p.powf(gamma) * (p - gamma * (1.0 - p) * log_q))
    }
}

/// `1 − GIoU` of two boxes given as distances from a shared point, with its
/// gradient with respect to the prediction.
pub fn giou_term(p: [f64; 4], t: [f64; 4]) -> (f64, [f64; 4]) {
    let [pl, pt, pr, pb] = p;
    let [tl, tt, tr, tb] = t;
    let ap = (pl + pr) * (pt + pb);
    let at = (tl + tr) * (tt + tb);
    let iw = pl.min(tl) + pr.min(tr);
    let ih = pt.min(tt) + pb.min(tb);
    let cw = pl.max(tl) + pr.max(tr);
    let ch = pt.max(tt) + pb.max(tb);
    let i = iw * ih;
    let u = ap + at - i;
    let c = cw * ch;
    let loss = 2.0 - i / u - u / c;

    let mut g = [0.0; 4];
    for (j, gj) in g.iter_mut().enumerate() {
        let horizontal = j % 2 == 0;
        let (pv, tv) = (p[j], t[j]);
        let d_ap = if horizontal { pt + pb } else { pl + pr };
        let smaller = pv < tv;
        let d_i = if smaller { if horizontal { ih } else { iw } } else { 0.0 };
        let d_c = if smaller { 0.0 } else if horizontal { ch } else { cw };
        let d_u = d_ap - d_i;
        *gj = -(d_i * u - i * d_u) / (u * u) - (d_u * c - u * d_c) / (c * c);
    }
    (loss, g)
}

fn check_inputs(head: &HeadOutput, targets: &[TargetMap]) -> Result<usize> {
    let n = head.levels.first().map(|l| l.cls.shape()[0]).unwrap_or(0);
    if targets.len() != n {
        return Err(CoreError::invalid(format!("{} target maps for a batch of {n}", targets.len())));
    }
    for t in targets {
        if t.levels.len() != head.levels.len() {
            return Err(CoreError::invalid("target map has the wrong number of levels"));
        }
        for (tl, hl) in t.levels.iter().zip(&head.levels) {
            let s = hl.cls.shape();
            if (s[2], s[3]) != (tl.height, tl.width) {
                return Err(CoreError::invalid(format!(
                    "target level {}x{} does not match head output {}x{}",
                    tl.height, tl.width, s[2], s[3]
                )));
            }
        }
    }
    Ok(n)
}

fn scalar_node(parents: &[&Tensor], value: f64, grads: Vec<Vec<Float>>) -> Tensor {
    Tensor::from_op(vec![1], vec![value as Float], parents, move |g| {
        let s = g[0];
        grads.iter().map(|v| Some(v.iter().map(|x| x * s).collect())).collect()
    })
}

fn total_pos(targets: &[TargetMap]) -> usize {
    targets.iter().map(|t| t.num_pos()).sum()
}

/// Sigmoid focal loss summed over every location and class, divided by the
/// number of positives (at least one).
pub fn focal_loss(head: &HeadOutput, targets: &[TargetMap], alpha: Option<f64>, gamma: f64) -> Result<Tensor> {
    let n = check_inputs(head, targets)?;
    let norm = total_pos(targets).max(1) as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(head.levels.len());
    for (l, level) in head.levels.iter().enumerate() {
        let [_, c, h, w]: [usize; 4] = level.cls.shape().try_into().expect("rank-4 class map");
        let hw = h * w;
        let x = level.cls.data();
        let mut g = vec![0.0 as Float; x.len()];
        for (b, t) in targets.iter().enumerate().take(n) {
            let cls_t = &t.levels[l].cls;
            for k in 0..c {
                for i in 0..hw {
                    let o = (b * c + k) * hw + i;
                    let (v, d) = focal_term(x[o] as f64, cls_t[i] == k + 1, alpha, gamma);
                    value += v;
                    g[o] = (d / norm) as Float;
                }
            }
        }
        grads.push(g);
    }
    let parents: Vec<&Tensor> = head.levels.iter().map(|l| &l.cls).collect();
    Ok(scalar_node(&parents, value / norm, grads))
}

/// Mean `1 − GIoU` over positive locations, optionally weighted by the
/// centerness targets. Zero when there are no positives.
pub fn giou_loss(head: &HeadOutput, targets: &[TargetMap], centerness_weighted: bool) -> Result<Tensor> {
    check_inputs(head, targets)?;
    let mut weight_sum = 0.0;
    for t in targets {
        for lt in &t.levels {
            for i in 0..lt.cls.len() {
                if lt.is_pos(i) {
                    weight_sum += if centerness_weighted { lt.ctr[i] } else { 1.0 };
                }
            }
        }
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(head.levels.len());
    for (l, level) in head.levels.iter().enumerate() {
        let [_, _, h, w]: [usize; 4] = level.reg.shape().try_into().expect("rank-4 regression map");
        let hw = h * w;
        let r = level.reg.data();
        let mut g = vec![0.0 as Float; r.len()];
        if weight_sum > 0.0 {
            for (b, t) in targets.iter().enumerate() {
                let lt = &t.levels[l];
                for i in 0..hw {
                    if !lt.is_pos(i) {
                        continue;
                    }
                    let wgt = if centerness_weighted { lt.ctr[i] } else { 1.0 } / weight_sum;
                    let p: [f64; 4] = std::array::from_fn(|j| r[(b * 4 + j) * hw + i] as f64);
                    let (v, d) = giou_term(p, lt.reg[i]);
                    value += wgt * v;
                    for j in 0..4 {
                        g[(b * 4 + j) * hw + i] = (wgt * d[j]) as Float;
                    }
                }
            }
        }
        grads.push(g);
    }
    let parents: Vec<&Tensor> = head.levels.iter().map(|l| &l.reg).collect();
    Ok(scalar_node(&parents, value, grads))
}

/// Binary cross-entropy between centerness logits and targets at positive
/// locations, less the targets' own entropy (so a perfect prediction scores
/// zero), divided by the number of positives (at least one).
pub fn centerness_loss(head: &HeadOutput, targets: &[TargetMap]) -> Result<Tensor> {
    check_inputs(head, targets)?;
    let norm = total_pos(targets).max(1) as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(head.levels.len());
    for (l, level) in head.levels.iter().enumerate() {
        let x = level.ctr.data();
        let mut g = vec![0.0 as Float; x.len()];
        for (b, t) in targets.iter().enumerate() {
            let lt = &t.levels[l];
            let hw = lt.cls.len();
            for i in 0..hw {
                if !lt.is_pos(i) {
                    continue;
                }
                let (xv, y) = (x[b * hw + i] as f64, lt.ctr[i]);
                value += softplus(xv) - y * xv - entropy(y);
                g[b * hw + i] = ((sigmoid(xv) - y) / norm) as Float;
            }
        }
        grads.push(g);
    }
    let parents: Vec<&Tensor> = head.levels.iter().map(|l| &l.ctr).collect();
    Ok(scalar_node(&parents, value / norm, grads))
}

/// `focal + λ·giou (+ centerness)`.
pub fn detection_loss(head: &HeadOutput, targets: &[TargetMap], cfg: &LossConfig) -> Result<LossBreakdown> {
    let cls = focal_loss(head, targets, cfg.focal_alpha, cfg.focal_gamma)?;
    let reg = scale(&giou_loss(head, targets, cfg.centerness_weighted_giou)?, cfg.lambda_reg as Float);
    let mut total = add(&cls, &reg)?;
    let mut centerness = 0.0;
    if cfg.centerness_loss {
        let c = centerness_loss(head, targets)?;
        centerness = c.item() as f64;
        total = add(&total, &c)?;
    }
    Ok(LossBreakdown {
        cls: cls.item() as f64,
        reg: reg.item() as f64,
        centerness,
        num_pos: total_pos(targets),
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_matches_closed_form() {
        let x: f64 = 0.3;
        let p = 1.0 / (1.0 + (-x).exp());
        let (v, _) = focal_term(x, true, Some(0.25), 2.0);
        assert!((v - (-0.25 * (1.0 - p).powi(2) * p.ln())).abs() < 1e-14);
        let (v, _) = focal_term(x, false, Some(0.25), 2.0);
        assert!((v - (-0.75 * p.powi(2) * (1.0 - p).ln())).abs() < 1e-14);
    }

    #[test]
    fn focal_derivative_by_differences() {
        for &x in &[-4.0, -0.7, 0.0, 0.4, 3.0] {
            for pos in [true, false] {
                for alpha in [Some(0.25), None] {
                    let h = 1e-6;
                    let num = (focal_term(x + h, pos, alpha, 2.0).0 - focal_term(x - h, pos, alpha, 2.0).0) / (2.0 * h);
                    let (_, d) = focal_term(x, pos, alpha, 2.0);
                    assert!((num - d).abs() < 1e-7, "x={x} pos={pos} {num} vs {d}");
                }
            }
        }
    }

    #[test]
    fn focal_is_stable_for_large_logits() {
        let (v, d) = focal_term(-800.0, true, Some(0.25), 2.0);
        assert!(v.is_finite() && d.is_finite());
        assert!((v - 200.0).abs() < 1e-9);
    }

    #[test]
    fn giou_identical_is_zero() {
        let (v, g) = giou_term([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]);
        assert!(v.abs() < 1e-15);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn giou_derivative_by_differences() {
        let t = [3.0, 2.0, 5.0, 1.5];
        let p = [2.1, 3.3, 6.2, 0.7];
        let (_, g) = giou_term(p, t);
        for j in 0..4 {
            let h = 1e-6;
            let (mut a, mut b) = (p, p);
            a[j] += h;
            b[j] -= h;
            let num = (giou_term(a, t).0 - giou_term(b, t).0) / (2.0 * h);
            assert!((num - g[j]).abs() < 1e-7, "{j}: {num} vs {}", g[j]);
        }
    }

    #[test]
    fn giou_bounds() {
        let (v, _) = giou_term([0.1, 0.1, 0.1, 0.1], [50.0, 50.0, 50.0, 50.0]);
        assert!(v > 0.0 && v < 2.0);
    }
}
