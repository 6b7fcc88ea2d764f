//! Gradient suites and the fusion ablation.

use rvf_tensor::gradcheck::{grad_check, op_suite, GradCheckConfig, GradCheckReport, OpCheck};
use rvf_tensor::{no_grad, Float, Tensor};

use crate::dataset::{simulate_samples, Sample};
use crate::error::{CoreError, Result};
use crate::evaluation::MetricReport;
use crate::model::{Fusion, HeadOutput, Model, ModelConfig};
use crate::scene_sim::SimConfig;
use crate::train::loss::detection_loss;
use crate::train::targets::{assign_targets, GtBox};
use crate::train::{evaluate, train, Progress, TrainConfig};
use crate::model::STRIDES;

/// Tolerance for the per-op checks.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for directional checks of the full loss.
pub const NETWORK_TOLERANCE: f64 = 1e-4;

pub fn op_gradcheck(seed: u64) -> Result<Vec<OpCheck>> {
    Ok(op_suite(seed)?)
}

/// Directional finite-difference check of the detection loss with respect to
/// every parameter, on one simulated pair at the model's input size.
///
/// Residual gammas that start at zero are set to 0.5 first, otherwise the
/// residual branches would receive no gradient and go unchecked.
pub fn network_gradcheck(cfg: &ModelConfig, probes: usize, seed: u64) -> Result<GradCheckReport> {
    let mut model = Model::new(cfg.clone())?;
    for (name, t) in model.params.names.iter().zip(model.params.tensors.iter_mut()) {
        if name.ends_with(".gamma") && t.data().iter().all(|&v| v == 0.0) {
            *t = Tensor::parameter(t.shape(), vec![0.5; t.numel()])?;
        }
    }
    let size = cfg.input_size;
    let sim = SimConfig { seed, ..SimConfig::desk(size as u32) };
    let sample = simulate_samples(&sim, 1)?.remove(0);
    let vision = Tensor::new(&[1, 3, size, size], sample.vision.to_chw())?;
    let radar = Tensor::new(&[1, 3, size, size], sample.radar.to_chw())?;
    let sizes: Vec<(usize, usize)> = cfg.pyramid_sizes().iter().map(|&s| (s, s)).collect();
    let gts: Vec<GtBox> = sample.boxes.iter().map(|&bbox| GtBox { bbox, class: 0 }).collect();
    let targets = vec![assign_targets(&gts, &sizes, &STRIDES, size)?];
    let loss_cfg = TrainConfig::default().loss_config();

    let f = |p: &[Tensor]| -> rvf_tensor::Result<Tensor> {
        let head = model
            .forward_with(p, &vision, &radar)
            .map_err(|e| rvf_tensor::TensorError::InvalidArgument(e.to_string()))?;
        let l = detection_loss(&head, &targets, &loss_cfg)
            .map_err(|e| rvf_tensor::TensorError::InvalidArgument(e.to_string()))?;
        Ok(l.total)
    };
    // Unnormalised Gaussian directions over ~10⁶ parameters: a small step
    // keeps the total perturbation well away from relu and max-pool kinks.
    let check = GradCheckConfig { step: 1e-8, ..GradCheckConfig::directional(probes, seed) };
    Ok(grad_check(f, &model.params.tensors, check)?)
}

/// How much zeroing the radar input moves the SAC attention map and the
/// head output of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarLiveness {
    pub attention_delta: f64,
    pub output_delta: f64,
}

impl RadarLiveness {
    pub fn is_live(&self) -> bool {
        self.attention_delta > 0.0 && self.output_delta > 0.0
    }
}

fn max_abs_diff(a: &[Float], b: &[Float]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn head_diff(a: &HeadOutput, b: &HeadOutput) -> f64 {
    a.levels
        .iter()
        .zip(&b.levels)
        .map(|(x, y)| {
            max_abs_diff(x.cls.data(), y.cls.data())
                .max(max_abs_diff(x.reg.data(), y.reg.data()))
                .max(max_abs_diff(x.ctr.data(), y.ctr.data()))
        })
        .fold(0.0, f64::max)
}

/// Runs `sample` with its radar image and with an all-zero radar image.
pub fn radar_liveness(model: &Model, sample: &Sample) -> Result<RadarLiveness> {
    let size = model.cfg.input_size;
    let s = sample.resized(size as u32);
    let vision = Tensor::new(&[1, 3, size, size], s.vision.to_chw())?;
    let radar = Tensor::new(&[1, 3, size, size], s.radar.to_chw())?;
    let zero = Tensor::zeros(&[1, 3, size, size]);
    no_grad(|| {
        let p = &model.params.tensors;
        let attention_delta = match (
            model.sac_attention(p, &model.preprocess_radar(p, &radar)?)?,
            model.sac_attention(p, &model.preprocess_radar(p, &zero)?)?,
        ) {
            (Some(a), Some(b)) => max_abs_diff(a.data(), b.data()),
            _ => 0.0,
        };
        let output_delta = head_diff(&model.forward(&vision, &radar)?, &model.forward(&vision, &zero)?);
        Ok(RadarLiveness { attention_delta, output_delta })
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub fusion: Fusion,
    pub report: MetricReport,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub sac_liveness: RadarLiveness,
}

impl AblationReport {
    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.report.values().iter().all(|v| v.is_finite()))
    }

    /// Fusion modes sorted by descending AP.
    pub fn ranking(&self) -> Vec<Fusion> {
        let mut rows: Vec<&AblationRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.report.ap.total_cmp(&a.report.ap));
        rows.iter().map(|r| r.fusion).collect()
    }

    pub fn to_text(&self) -> String {
        let table: Vec<(String, MetricReport)> =
            self.rows.iter().map(|r| (r.fusion.name().to_string(), r.report.clone())).collect();
        let mut s = MetricReport::table(&table);
        let order: Vec<&str> = self.ranking().iter().map(|f| f.name()).collect();
        s.push_str(&format!("observed AP order: {}\n", order.join(" > ")));
        s.push_str(&format!(
            "SAC radar ablation: attention delta {:.3e}, output delta {:.3e} ({})\n",
            self.sac_liveness.attention_delta,
            self.sac_liveness.output_delta,
            if self.sac_liveness.is_live() { "live" } else { "DEAD" }
        ));
        s
    }
}

/// Trains one model per fusion mode from the same seed and scores each on
/// `eval`.
pub fn ablate_fusion(
    train_set: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(Fusion, Progress<'_>),
) -> Result<AblationReport> {
    if eval.is_empty() {
        return Err(CoreError::invalid("ablation needs a non-empty evaluation split"));
    }
    let mut rows = Vec::with_capacity(4);
    let mut sac_liveness = None;
    for fusion in Fusion::ALL {
        let mut run = cfg.clone();
        run.model.fusion = fusion;
        if fusion == Fusion::Sac && run.model.sac_kernels.is_empty() {
            run.model.sac_kernels = ModelConfig::default().sac_kernels;
        }
        run.eval_interval = 0;
        let mut model = Model::new(run.model.clone())?;
        let out = train(&mut model, train_set, &[], &run, |p| progress(fusion, p))?;
        let report = evaluate(&model, eval, &run.decode())?;
        if fusion == Fusion::Sac {
            sac_liveness = Some(radar_liveness(&model, &eval[0])?);
        }
        rows.push(AblationRow {
            fusion,
            report,
            final_loss: out.losses.last().map_or(f64::NAN, |r| r.total),
        });
    }
    Ok(AblationReport { rows, sac_liveness: sac_liveness.expect("SAC is one of the modes") })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_network_gradient_matches() {
        let cfg = ModelConfig { input_size: 32, width_mult: 0.0625, ..ModelConfig::default() };
        let r = network_gradcheck(&cfg, 4, 3).unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < NETWORK_TOLERANCE, "{r:?}");
    }

    #[test]
    fn fresh_sac_model_reacts_to_radar() {
        let model = Model::new(ModelConfig { input_size: 64, ..ModelConfig::default() }).unwrap();
        let s = simulate_samples(&SimConfig::desk(64), 1).unwrap().remove(0);
        assert!(radar_liveness(&model, &s).unwrap().is_live());
    }
}
