//! Target assignment, losses and the SGD training loop.

pub mod loss;
pub mod targets;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvf_tensor::optim::{Sgd, SgdConfig};
use rvf_tensor::{no_grad, Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{CoreError, Result};
use crate::evaluation::{compute_metrics, Detection, GroundTruth, MetricReport};
use crate::formats::annotations::{xyxy_to_xywh, DetectionRecord, VEHICLE_CATEGORY};
use crate::model::{decode_detections, DetectionBox};
use crate::model::{Model, ModelConfig, STRIDES};
use loss::{detection_loss, LossConfig};
use targets::{assign_targets, GtBox, TargetMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_pairs: usize,
    pub lambda_reg: f64,
    pub focal_alpha: Option<f64>,
    pub focal_gamma: f64,
    pub centerness_loss: bool,
    pub centerness_weighted_giou: bool,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub eval_interval: usize,
    pub seed: u64,
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_dets: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
            iterations: 2000,
            batch_pairs: 4,
            lambda_reg: 1.0,
            focal_alpha: Some(0.25),
            focal_gamma: 2.0,
            centerness_loss: true,
            centerness_weighted_giou: true,
            eval_interval: 500,
            seed: 0,
            score_thresh: 0.05,
            nms_iou: 0.6,
            max_dets: 100,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| CoreError::json("train config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(CoreError::invalid(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        finite_nonneg("lr", self.lr)?;
        finite_nonneg("momentum", self.momentum)?;
        finite_nonneg("weight_decay", self.weight_decay)?;
        if self.batch_pairs == 0 {
            return Err(CoreError::invalid("batch_pairs must be positive"));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) || !(0.0..1.0).contains(&self.score_thresh) {
            return Err(CoreError::invalid("nms_iou and score_thresh must lie in [0, 1]"));
        }
        if self.max_dets == 0 {
            return Err(CoreError::invalid("max_dets must be positive"));
        }
        self.loss_config().validate()?;
        self.model.validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            focal_alpha: self.focal_alpha,
            focal_gamma: self.focal_gamma,
            lambda_reg: self.lambda_reg,
            centerness_loss: self.centerness_loss,
            centerness_weighted_giou: self.centerness_weighted_giou,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr as Float,
            momentum: self.momentum as Float,
            weight_decay: self.weight_decay as Float,
        }
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig { score_thresh: self.score_thresh, nms_iou: self.nms_iou, max_dets: self.max_dets }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_dets: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        TrainConfig::default().decode()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub centerness: f64,
}

pub const LOSS_CSV_HEADER: &str = "iteration,total,cls,reg,centerness";

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!("{},{},{},{},{}\n", r.iteration, r.total, r.cls, r.reg, r.centerness));
    }
    s
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(loss_csv(records).as_bytes()).map_err(|e| CoreError::io(path, e))
}

/// Events reported while training.
#[derive(Debug)]
pub enum Progress<'a> {
    Loss(&'a LossRecord),
    Eval(usize, &'a MetricReport),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub losses: Vec<LossRecord>,
    pub evals: Vec<(usize, MetricReport)>,
}

/// A sample resized to the network input, with its planar tensors and targets.
struct Prepared {
    vision: Vec<Float>,
    radar: Vec<Float>,
    targets: TargetMap,
}

fn gt_boxes(boxes: &[[f64; 4]]) -> Vec<GtBox> {
    boxes
        .iter()
        .filter(|b| b[2] > b[0] && b[3] > b[1])
        .map(|&bbox| GtBox { bbox, class: 0 })
        .collect()
}

fn prepare(samples: &[Sample], cfg: &ModelConfig) -> Result<Vec<Prepared>> {
    let size = cfg.input_size;
    let sizes: Vec<(usize, usize)> = cfg.pyramid_sizes().iter().map(|&s| (s, s)).collect();
    samples
        .iter()
        .map(|s| {
            let r = s.resized(size as u32);
            Ok(Prepared {
                vision: r.vision.to_chw(),
                radar: r.radar.to_chw(),
                targets: assign_targets(&gt_boxes(&r.boxes), &sizes, &STRIDES, size)?,
            })
        })
        .collect()
}

fn stack(items: &[&Prepared], size: usize, radar: bool) -> Result<Tensor> {
    let mut data = Vec::with_capacity(items.len() * 3 * size * size);
    for p in items {
        data.extend_from_slice(if radar { &p.radar } else { &p.vision });
    }
    Ok(Tensor::new(&[items.len(), 3, size, size], data)?)
}

/// Loss of `model` on a batch of samples, with the graph attached to the
/// model parameters.
pub fn batch_loss(model: &Model, samples: &[Sample], cfg: &LossConfig) -> Result<loss::LossBreakdown> {
    let prepared = prepare(samples, &model.cfg)?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let size = model.cfg.input_size;
    let head = model.forward(&stack(&refs, size, false)?, &stack(&refs, size, true)?)?;
    let targets: Vec<TargetMap> = prepared.into_iter().map(|p| p.targets).collect();
    detection_loss(&head, &targets, cfg)
}

/// Trains `model` in place with constant-rate SGD.
///
/// Batches are drawn without replacement from a seeded shuffle, reshuffled
/// at every pass. `eval` samples (if any) are scored every `eval_interval`
/// iterations and after the last one.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(CoreError::invalid("training set is empty"));
    }
    let prepared = prepare(samples, &model.cfg)?;
    let loss_cfg = cfg.loss_config();
    let size = model.cfg.input_size;
    let mut sgd = Sgd::new(cfg.sgd());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut outcome = TrainOutcome { losses: Vec::with_capacity(cfg.iterations), evals: Vec::new() };

    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_pairs);
        while batch.len() < cfg.batch_pairs {
            if cursor == order.len() {
                order = (0..prepared.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&prepared[order[cursor]]);
            cursor += 1;
        }
        let head = model.forward(&stack(&batch, size, false)?, &stack(&batch, size, true)?)?;
        let targets: Vec<TargetMap> = batch.iter().map(|p| p.targets.clone()).collect();
        let l = detection_loss(&head, &targets, &loss_cfg)?;
        let total = l.total.item() as f64;
        if !total.is_finite() {
            return Err(CoreError::Divergence { iteration: it, loss: total });
        }
        l.total.backward()?;
        drop(head);
        drop(l.total);
        sgd.step(&mut model.params.tensors)?;
        let rec = LossRecord { iteration: it, total, cls: l.cls, reg: l.reg, centerness: l.centerness };
        progress(Progress::Loss(&rec));
        outcome.losses.push(rec);

        let due = (cfg.eval_interval > 0 && it % cfg.eval_interval == 0) || it == cfg.iterations;
        if due && !eval.is_empty() {
            let report = evaluate(model, eval, &cfg.decode())?;
            progress(Progress::Eval(it, &report));
            outcome.evals.push((it, report));
        }
    }
    Ok(outcome)
}

/// Detections per sample in the sample's own pixel coordinates.
pub fn predict(model: &Model, samples: &[Sample], dc: &DecodeConfig) -> Result<Vec<Vec<DetectionBox>>> {
    let size = model.cfg.input_size;
    no_grad(|| {
        samples
            .iter()
            .map(|s| {
                let r = s.resized(size as u32);
                let v = Tensor::new(&[1, 3, size, size], r.vision.to_chw())?;
                let rd = Tensor::new(&[1, 3, size, size], r.radar.to_chw())?;
                let head = model.forward(&v, &rd)?;
                let sx = s.vision.width as f64 / size as f64;
                let sy = s.vision.height as f64 / size as f64;
                let dets = decode_detections(&head, 0, size as f64, size as f64, dc.score_thresh, dc.nms_iou, dc.max_dets);
                Ok(dets
                    .into_iter()
                    .map(|d| DetectionBox { x1: d.x1 * sx, y1: d.y1 * sy, x2: d.x2 * sx, y2: d.y2 * sy, ..d })
                    .collect())
            })
            .collect()
    })
}

/// Detection records with ids numbered from 1 in sample order.
pub fn detection_records(samples: &[Sample], preds: &[Vec<DetectionBox>]) -> Vec<DetectionRecord> {
    let mut out = Vec::new();
    for (s, dets) in samples.iter().zip(preds) {
        for d in dets {
            let bbox = xyxy_to_xywh(d.bbox());
            out.push(DetectionRecord {
                id: out.len() as u64 + 1,
                image_id: s.image_id,
                bbox,
                category_id: VEHICLE_CATEGORY + d.class_id as u64,
                area: bbox[2] * bbox[3],
                score: d.score,
            });
        }
    }
    out
}

pub fn ground_truth(samples: &[Sample]) -> Vec<GroundTruth> {
    samples
        .iter()
        .flat_map(|s| {
            s.boxes
                .iter()
                .map(move |&bbox| GroundTruth { image_id: s.image_id, category_id: VEHICLE_CATEGORY, bbox })
        })
        .collect()
}

pub fn evaluate(model: &Model, samples: &[Sample], dc: &DecodeConfig) -> Result<MetricReport> {
    let preds = predict(model, samples, dc)?;
    let dets: Vec<Detection> = samples
        .iter()
        .zip(&preds)
        .flat_map(|(s, ds)| {
            ds.iter().map(move |d| Detection {
                image_id: s.image_id,
                category_id: VEHICLE_CATEGORY + d.class_id as u64,
                bbox: d.bbox(),
                score: d.score,
            })
        })
        .collect();
    Ok(compute_metrics(&dets, &ground_truth(samples), dc.max_dets))
}
