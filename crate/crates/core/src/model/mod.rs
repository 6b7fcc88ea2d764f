//! The fusion detector.
//!
//! ```text
//! vision ─ stem ─ 3 residual blocks ─┐
//!                                    ├─ fuse ─ c3 ─ c4 ─ c5 ─ path aggregation ─ N3..N7 ─ head
//! radar  ─ stem ─ 1 residual block ──┘
//! ```
//!
//! Both branches end at stride 4 with `256·width_mult` channels. The backbone
//! stages halve the resolution each (strides 8, 16, 32); N6 and N7 are two
//! further stride-2 convolutions on N5.

mod decode;
mod layers;
mod weights_io;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvf_tensor::{add, concat_channels, exp, max_pool2d, mul, relu, sigmoid, upsample_nearest, ConvSpec, Float, PoolSpec, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use decode::{decode_detections, decode_location, nms, DetectionBox};
pub use layers::{Affine, BlockKind, Conv, ConvAffine, Init, Params, ResBlock};

pub const STRIDES: [usize; 5] = [8, 16, 32, 64, 128];

/// Prior probability of the foreground class at initialisation.
const CLS_PRIOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Fusion {
    Add,
    Mul,
    Cat,
    Sac,
}

impl Fusion {
    pub const ALL: [Fusion; 4] = [Fusion::Add, Fusion::Mul, Fusion::Cat, Fusion::Sac];

    pub fn name(self) -> &'static str {
        match self {
            Fusion::Add => "ADD",
            Fusion::Mul => "MUL",
            Fusion::Cat => "CAT",
            Fusion::Sac => "SAC",
        }
    }
}

impl FromStr for Fusion {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Fusion> {
        Fusion::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::invalid(format!("unknown fusion {s:?} (expected add, mul, cat or sac)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Square network input side, pixels.
    pub input_size: usize,
    /// Channel multiplier on the reference widths 64/256/512/1024/2048.
    pub width_mult: f64,
    pub fusion: Fusion,
    pub sac_kernels: Vec<usize>,
    pub head_tower_depth: usize,
    pub num_classes: usize,
    pub blocks_per_stage: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 128,
            width_mult: 0.125,
            fusion: Fusion::Sac,
            sac_kernels: vec![1, 3, 5],
            head_tower_depth: 2,
            num_classes: 1,
            blocks_per_stage: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 4 != 0 {
            return Err(CoreError::invalid(format!("input_size {} must be a positive multiple of 4", self.input_size)));
        }
        if !(self.width_mult.is_finite() && self.width_mult > 0.0) {
            return Err(CoreError::invalid("width_mult must be positive"));
        }
        if self.fusion == Fusion::Sac && self.sac_kernels.is_empty() {
            return Err(CoreError::invalid("SAC fusion needs at least one kernel"));
        }
        if self.sac_kernels.iter().any(|k| k % 2 == 0) {
            return Err(CoreError::invalid(format!("SAC kernels must be odd, got {:?}", self.sac_kernels)));
        }
        if self.num_classes == 0 || self.blocks_per_stage == 0 {
            return Err(CoreError::invalid("num_classes and blocks_per_stage must be positive"));
        }
        Ok(())
    }

    pub fn width(&self, reference: usize) -> usize {
        ((reference as f64 * self.width_mult).round() as usize).max(1)
    }

    pub fn stem_channels(&self) -> usize {
        self.width(64)
    }

    /// Channels at the fusion point and in every pyramid level.
    pub fn channels(&self) -> usize {
        self.width(256)
    }

    pub fn block_kind(&self) -> BlockKind {
        if self.width_mult >= 1.0 {
            BlockKind::Bottleneck
        } else {
            BlockKind::Basic
        }
    }

    /// Spatial side of N3..N7 for this input size.
    pub fn pyramid_sizes(&self) -> [usize; 5] {
        pyramid_sizes(self.input_size)
    }
}

fn conv_out(size: usize, k: usize, s: usize, p: usize) -> usize {
    (size + 2 * p - k) / s + 1
}

/// Stride formula chain: 7×7 s2 stem, 3×3 s2 pool, then 3×3 s2 steps.
pub fn pyramid_sizes(input: usize) -> [usize; 5] {
    let mut s = conv_out(conv_out(input, 7, 2, 3), 3, 2, 1);
    let mut out = [0; 5];
    for o in out.iter_mut() {
        s = conv_out(s, 3, 2, 1);
        *o = s;
    }
    out
}

#[derive(Debug, Clone)]
struct Branch {
    stem: ConvAffine,
    blocks: Vec<ResBlock>,
}

#[derive(Debug, Clone)]
enum Fuser {
    Add,
    Mul,
    Cat { reduce: Conv },
    Sac { attention: Vec<Conv>, reduce: Conv },
}

#[derive(Debug, Clone)]
struct Pan {
    lateral: [Conv; 3],
    smooth: [Conv; 3],
    down: [Conv; 2],
    merge: [Conv; 2],
    p6: Conv,
    p7: Conv,
}

#[derive(Debug, Clone)]
struct Head {
    cls_tower: Vec<Conv>,
    reg_tower: Vec<Conv>,
    cls_out: Conv,
    reg_out: Conv,
    ctr_out: Conv,
    scales: [usize; 5],
}

/// Outputs of the head at one pyramid level.
#[derive(Debug, Clone)]
pub struct LevelOutput {
    pub stride: usize,
    /// `[N, C, H, W]` class logits.
    pub cls: Tensor,
    /// `[N, 4, H, W]` distances `(l, t, r, b)`, positive.
    pub reg: Tensor,
    /// `[N, 1, H, W]` centerness logits.
    pub ctr: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub levels: Vec<LevelOutput>,
}

/// Pyramid levels N3..N7.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: [Tensor; 5],
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Params,
    vision: Branch,
    radar: Branch,
    fuser: Fuser,
    stages: [Vec<ResBlock>; 3],
    pan: Pan,
    head: Head,
}

impl Model {
    /// Builds a freshly initialised network. Kernel lists are dropped for
    /// fusion modes that do not use them.
    pub fn new(mut cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        if cfg.fusion != Fusion::Sac {
            cfg.sac_kernels.clear();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = Params::default();
        let rng = &mut rng;
        let kind = cfg.block_kind();
        let (stem_c, c) = (cfg.stem_channels(), cfg.channels());

        let mut branch = |p: &mut Params, name: &str, blocks: usize, shift: bool| -> Result<Branch> {
            let stem = ConvAffine::new(p, rng, &format!("{name}.stem"), ConvSpec::new(3, stem_c, 7, 2, 3), 1.0, shift)?;
            let blocks = (0..blocks)
                .map(|i| {
                    let in_c = if i == 0 { stem_c } else { c };
                    ResBlock::new(p, rng, &format!("{name}.block{i}"), kind, in_c, c, 1, shift)
                })
                .collect::<Result<_>>()?;
            Ok(Branch { stem, blocks })
        };
        let vision = branch(&mut p, "vision", 3, true)?;
        // no shifts: an all-zero radar image yields all-zero radar features
        let radar = branch(&mut p, "radar", 1, false)?;

        let fuser = match cfg.fusion {
            Fusion::Add => Fuser::Add,
            Fusion::Mul => Fuser::Mul,
            Fusion::Cat => Fuser::Cat {
                reduce: Conv::new(&mut p, rng, "fuse.cat", ConvSpec::new(2 * c, c, 1, 1, 0), Some(0.0), Init::Msra)?,
            },
            Fusion::Sac => {
                let attention = cfg
                    .sac_kernels
                    .iter()
                    .map(|&k| Conv::new(&mut p, rng, &format!("fuse.sac.k{k}"), ConvSpec::new(c, 1, k, 1, k / 2), Some(0.0), Init::Msra))
                    .collect::<Result<_>>()?;
                let reduce = Conv::new(&mut p, rng, "fuse.sac.reduce", ConvSpec::new(2 * c, c, 1, 1, 0), Some(0.0), Init::Msra)?;
                Fuser::Sac { attention, reduce }
            }
        };

        let widths = [c, cfg.width(512), cfg.width(1024), cfg.width(2048)];
        let mut stage = |p: &mut Params, s: usize| -> Result<Vec<ResBlock>> {
            (0..cfg.blocks_per_stage)
                .map(|i| {
                    let (in_c, stride) = if i == 0 { (widths[s], 2) } else { (widths[s + 1], 1) };
                    ResBlock::new(p, rng, &format!("backbone.c{}.block{i}", s + 3), kind, in_c, widths[s + 1], stride, true)
                })
                .collect()
        };
        let stages = [stage(&mut p, 0)?, stage(&mut p, 1)?, stage(&mut p, 2)?];

        let mut conv = |p: &mut Params, name: &str, spec: ConvSpec| Conv::new(p, rng, name, spec, Some(0.0), Init::Msra);
        let pan = Pan {
            lateral: [
                conv(&mut p, "pan.lat3", ConvSpec::new(widths[1], c, 1, 1, 0))?,
                conv(&mut p, "pan.lat4", ConvSpec::new(widths[2], c, 1, 1, 0))?,
                conv(&mut p, "pan.lat5", ConvSpec::new(widths[3], c, 1, 1, 0))?,
            ],
            smooth: [
                conv(&mut p, "pan.smooth3", ConvSpec::new(c, c, 3, 1, 1))?,
                conv(&mut p, "pan.smooth4", ConvSpec::new(c, c, 3, 1, 1))?,
                conv(&mut p, "pan.smooth5", ConvSpec::new(c, c, 3, 1, 1))?,
            ],
            down: [
                conv(&mut p, "pan.down3", ConvSpec::new(c, c, 3, 2, 1))?,
                conv(&mut p, "pan.down4", ConvSpec::new(c, c, 3, 2, 1))?,
            ],
            merge: [
                conv(&mut p, "pan.merge4", ConvSpec::new(c, c, 3, 1, 1))?,
                conv(&mut p, "pan.merge5", ConvSpec::new(c, c, 3, 1, 1))?,
            ],
            p6: conv(&mut p, "pan.p6", ConvSpec::new(c, c, 3, 2, 1))?,
            p7: conv(&mut p, "pan.p7", ConvSpec::new(c, c, 3, 2, 1))?,
        };

        let tower = |p: &mut Params, rng: &mut ChaCha8Rng, name: &str| -> Result<Vec<Conv>> {
            (0..cfg.head_tower_depth)
                .map(|i| Conv::new(p, rng, &format!("head.{name}.{i}"), ConvSpec::new(c, c, 3, 1, 1), Some(0.0), Init::Msra))
                .collect()
        };
        let cls_tower = tower(&mut p, rng, "cls_tower")?;
        let reg_tower = tower(&mut p, rng, "reg_tower")?;
        let prior = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln();
        let small = Init::Normal(0.01);
        let head = Head {
            cls_tower,
            reg_tower,
            cls_out: Conv::new(&mut p, rng, "head.cls", ConvSpec::new(c, cfg.num_classes, 3, 1, 1), Some(prior as Float), small)?,
            reg_out: Conv::new(&mut p, rng, "head.reg", ConvSpec::new(c, 4, 3, 1, 1), Some(0.0), small)?,
            ctr_out: Conv::new(&mut p, rng, "head.ctr", ConvSpec::new(c, 1, 3, 1, 1), Some(0.0), small)?,
            scales: std::array::from_fn(|l| {
                // exp(s·x) at x = 1 is four strides, rescaled to the input size
                let s = (STRIDES[l] as f64 * cfg.input_size as f64 / 800.0 * 4.0).max(2.0).ln();
                p.push(format!("head.scale{}", l + 3), rvf_tensor::init::constant_init(&[1], s as Float))
            }),
        };
        // shift regression pre-activations to 1 so the per-level scales set the initial box size
        let reg_b = head.reg_out.b.expect("reg conv has a bias");
        p.tensors[reg_b] = rvf_tensor::init::constant_init(&[4], 1.0);

        Ok(Model { cfg, params: p, vision, radar, fuser, stages, pan, head })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn run_branch(&self, p: &[Tensor], b: &Branch, x: &Tensor) -> Result<Tensor> {
        layers::check_channels("image input", x, 3)?;
        let mut h = relu(&b.stem.forward(p, x)?);
        h = max_pool2d(&h, PoolSpec::new(3, 2, 1))?;
        for block in &b.blocks {
            h = block.forward(p, &h)?;
        }
        Ok(h)
    }

    pub fn preprocess_vision(&self, p: &[Tensor], img: &Tensor) -> Result<Tensor> {
        self.run_branch(p, &self.vision, img)
    }

    pub fn preprocess_radar(&self, p: &[Tensor], img: &Tensor) -> Result<Tensor> {
        self.run_branch(p, &self.radar, img)
    }

    /// SAC attention map `sigmoid(Σ_k conv_k(r))`, `[N, 1, H, W]`.
    pub fn sac_attention(&self, p: &[Tensor], r: &Tensor) -> Result<Option<Tensor>> {
        let Fuser::Sac { attention, .. } = &self.fuser else {
            return Ok(None);
        };
        let mut sum = attention[0].forward(p, r)?;
        for conv in &attention[1..] {
            sum = add(&sum, &conv.forward(p, r)?)?;
        }
        Ok(Some(sigmoid(&sum)))
    }

    pub fn fuse(&self, p: &[Tensor], v: &Tensor, r: &Tensor) -> Result<Tensor> {
        if v.shape() != r.shape() {
            return Err(CoreError::invalid(format!("fuse: vision {:?} and radar {:?} differ", v.shape(), r.shape())));
        }
        Ok(match &self.fuser {
            Fuser::Add => add(v, r)?,
            Fuser::Mul => mul(v, r)?,
            Fuser::Cat { reduce } => reduce.forward(p, &concat_channels(&[v.clone(), r.clone()])?)?,
            Fuser::Sac { reduce, .. } => {
                let a = self.sac_attention(p, r)?.expect("SAC fuser");
                let enhanced = mul(v, &a)?;
                reduce.forward(p, &concat_channels(&[enhanced, r.clone()])?)?
            }
        })
    }

    pub fn backbone_stages(&self, p: &[Tensor], fused: &Tensor) -> Result<[Tensor; 3]> {
        let mut h = fused.clone();
        let mut out = Vec::with_capacity(3);
        for stage in &self.stages {
            for block in stage {
                h = block.forward(p, &h)?;
            }
            out.push(h.clone());
        }
        Ok(out.try_into().expect("three stages"))
    }

    pub fn path_aggregate(&self, p: &[Tensor], c: &[Tensor; 3]) -> Result<FeaturePyramid> {
        let pan = &self.pan;
        let up_to = |x: &Tensor, like: &Tensor| upsample_nearest(x, like.shape()[2], like.shape()[3]);
        let l5 = pan.lateral[2].forward(p, &c[2])?;
        let l4 = add(&pan.lateral[1].forward(p, &c[1])?, &up_to(&l5, &c[1])?)?;
        let l3 = add(&pan.lateral[0].forward(p, &c[0])?, &up_to(&l4, &c[0])?)?;
        let p3 = pan.smooth[0].forward(p, &l3)?;
        let p4 = pan.smooth[1].forward(p, &l4)?;
        let p5 = pan.smooth[2].forward(p, &l5)?;
        let n3 = p3;
        let n4 = pan.merge[0].forward(p, &add(&pan.down[0].forward(p, &n3)?, &p4)?)?;
        let n5 = pan.merge[1].forward(p, &add(&pan.down[1].forward(p, &n4)?, &p5)?)?;
        let n6 = pan.p6.forward(p, &n5)?;
        let n7 = pan.p7.forward(p, &relu(&n6))?;
        Ok(FeaturePyramid { levels: [n3, n4, n5, n6, n7] })
    }

    pub fn head_forward(&self, p: &[Tensor], pyr: &FeaturePyramid) -> Result<HeadOutput> {
        let h = &self.head;
        let mut levels = Vec::with_capacity(5);
        for (l, x) in pyr.levels.iter().enumerate() {
            let mut cls = x.clone();
            for conv in &h.cls_tower {
                cls = relu(&conv.forward(p, &cls)?);
            }
            let mut reg = x.clone();
            for conv in &h.reg_tower {
                reg = relu(&conv.forward(p, &reg)?);
            }
            levels.push(LevelOutput {
                stride: STRIDES[l],
                cls: h.cls_out.forward(p, &cls)?,
                reg: exp(&mul(&h.reg_out.forward(p, &reg)?, &p[h.scales[l]])?),
                ctr: h.ctr_out.forward(p, &reg)?,
            });
        }
        Ok(HeadOutput { levels })
    }

    /// Pyramid for a batch, optionally replacing the radar features.
    pub fn pyramid_with(&self, p: &[Tensor], vision: &Tensor, radar: &Tensor, radar_override: Option<&Tensor>) -> Result<FeaturePyramid> {
        if vision.shape() != radar.shape() {
            return Err(CoreError::invalid(format!(
                "vision batch {:?} and radar batch {:?} differ",
                vision.shape(),
                radar.shape()
            )));
        }
        let v = self.preprocess_vision(p, vision)?;
        let r = match radar_override {
            Some(r) => r.clone(),
            None => self.preprocess_radar(p, radar)?,
        };
        let fused = self.fuse(p, &v, &r)?;
        let c = self.backbone_stages(p, &fused)?;
        self.path_aggregate(p, &c)
    }

    /// Forward pass with an explicit parameter list (same order as `params`).
    pub fn forward_with(&self, p: &[Tensor], vision: &Tensor, radar: &Tensor) -> Result<HeadOutput> {
        if p.len() != self.params.tensors.len() {
            return Err(CoreError::invalid(format!("expected {} parameters, got {}", self.params.tensors.len(), p.len())));
        }
        let pyr = self.pyramid_with(p, vision, radar, None)?;
        self.head_forward(p, &pyr)
    }

    pub fn forward(&self, vision: &Tensor, radar: &Tensor) -> Result<HeadOutput> {
        self.forward_with(&self.params.tensors, vision, radar)
    }
}
