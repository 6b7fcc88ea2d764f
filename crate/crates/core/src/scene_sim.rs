//! Deterministic synthetic intersection: paired camera images, radar frames and
//! ground-truth boxes.
//!
//! The world has `z` up and a camera on a pole at the origin looking along `+x`.
//! Road A runs along the `x` axis; road B crosses it at `x = cross_road_x`.
//! Vehicles are cuboids moving at constant velocity along their heading.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::formats::annotations::{
    xyxy_to_xywh, AnnotationRecord, AnnotationSet, Category, ImageRecord, VEHICLE_CATEGORY,
};
use crate::formats::radar_json::RadarFrameJson;
use crate::formats::rig::{Pose, RigFile};
use crate::formats::{to_json_string, write_json};
use crate::geometry::{
    cartesian_to_polar, dot3, norm3, project_world_point, sub3, CameraIntrinsics, SensorRig, Vec3, MIN_DEPTH,
};
use crate::image::RgbImage;
use crate::radar_imaging::{render_radar_frame, time_align, AlignGate, RadarFrame, RgbTriple};

pub const BACKGROUND: RgbTriple = [128, 128, 128];

const PALETTE: [RgbTriple; 6] = [
    [200, 30, 30],
    [30, 60, 200],
    [240, 240, 240],
    [20, 20, 20],
    [230, 200, 20],
    [30, 160, 60],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    /// Center of the cuboid, world frame.
    pub center: Vec3,
    /// `(length, width, height)`, meters.
    pub extent: Vec3,
    /// Direction of travel, radians from world `+x` toward `+y`.
    pub heading: f64,
    pub speed: f64,
    pub color: RgbTriple,
}

impl Vehicle {
    pub fn forward(&self) -> Vec3 {
        [self.heading.cos(), self.heading.sin(), 0.0]
    }

    pub fn left(&self) -> Vec3 {
        [-self.heading.sin(), self.heading.cos(), 0.0]
    }

    pub fn velocity(&self) -> Vec3 {
        let f = self.forward();
        [f[0] * self.speed, f[1] * self.speed, 0.0]
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (f, l) = (self.forward(), self.left());
        let [hl, hw, hh] = [self.extent[0] / 2.0, self.extent[1] / 2.0, self.extent[2] / 2.0];
        let mut out = [[0.0; 3]; 8];
        let mut i = 0;
        for sf in [-1.0, 1.0] {
            for sl in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out[i] = [
                        self.center[0] + sf * hl * f[0] + sl * hw * l[0],
                        self.center[1] + sf * hl * f[1] + sl * hw * l[1],
                        self.center[2] + sz * hh,
                    ];
                    i += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub vehicles: Vec<Vehicle>,
    pub rig: SensorRig,
    pub time: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarNoiseModel {
    pub sigma_rho: f64,
    /// Applied to both azimuth and elevation, radians.
    pub sigma_theta: f64,
    pub sigma_v: f64,
    pub dropout_p: f64,
    /// Expected number of false returns per frame.
    pub ghost_rate: f64,
    pub points_per_vehicle: u32,
}

impl Default for RadarNoiseModel {
    fn default() -> Self {
        RadarNoiseModel {
            sigma_rho: 0.1,
            sigma_theta: 0.2f64.to_radians(),
            sigma_v: 0.1,
            dropout_p: 0.1,
            ghost_rate: 1.0,
            points_per_vehicle: 8,
        }
    }
}

impl RadarNoiseModel {
    /// Exact returns: no noise, no dropout, no ghosts.
    pub fn noiseless(points_per_vehicle: u32) -> Self {
        RadarNoiseModel {
            sigma_rho: 0.0,
            sigma_theta: 0.0,
            sigma_v: 0.0,
            dropout_p: 0.0,
            ghost_rate: 0.0,
            points_per_vehicle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_rho, self.sigma_theta, self.sigma_v];
        if !sigmas.iter().all(|s| s.is_finite() && *s >= 0.0)
            || !(0.0..=1.0).contains(&self.dropout_p)
            || !(self.ghost_rate.is_finite() && self.ghost_rate >= 0.0)
            || self.points_per_vehicle == 0
        {
            return Err(CoreError::invalid(format!("invalid radar noise model {self:?}")));
        }
        Ok(())
    }
}

/// Advances every vehicle by `speed·dt` along its heading.
pub fn step_scene(scene: &Scene, dt: f64) -> Result<Scene> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CoreError::invalid(format!("step_scene: dt must be positive, got {dt}")));
    }
    let mut next = scene.clone();
    for v in &mut next.vehicles {
        let vel = v.velocity();
        v.center = [v.center[0] + vel[0] * dt, v.center[1] + vel[1] * dt, v.center[2]];
    }
    next.time += dt;
    Ok(next)
}

/// Ground-truth box of one vehicle, `[x1, y1, x2, y2]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionBox {
    pub vehicle_id: u32,
    pub bbox: [f64; 4],
}

/// Flat-shaded rendering: each visible vehicle is the filled rectangle spanned
/// by its projected corners, drawn far to near over a gray background.
pub fn render_vision(scene: &Scene) -> (RgbImage, Vec<VisionBox>) {
    let k = &scene.rig.intrinsics;
    let (w, h) = (k.width as f64, k.height as f64);
    let mut img = RgbImage::filled(k.width, k.height, BACKGROUND);
    let mut drawn: Vec<(f64, &Vehicle, [f64; 4])> = Vec::new();
    for v in &scene.vehicles {
        let mut hull = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut any = false;
        for c in v.corners() {
            let p = project_world_point(&c, &scene.rig);
            if p.z_c <= MIN_DEPTH {
                continue;
            }
            any = true;
            hull = [hull[0].min(p.x_p), hull[1].min(p.y_p), hull[2].max(p.x_p), hull[3].max(p.y_p)];
        }
        if !any {
            continue;
        }
        let clipped = [hull[0].clamp(0.0, w), hull[1].clamp(0.0, h), hull[2].clamp(0.0, w), hull[3].clamp(0.0, h)];
        if clipped[0] >= clipped[2] || clipped[1] >= clipped[3] {
            continue;
        }
        let depth = project_world_point(&v.center, &scene.rig).z_c;
        drawn.push((depth, v, clipped));
    }
    drawn.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    for (_, v, b) in &drawn {
        img.fill_rect(b[0], b[1], b[2], b[3], v.color);
    }
    let mut boxes: Vec<VisionBox> = drawn.iter().map(|(_, v, b)| VisionBox { vehicle_id: v.id, bbox: *b }).collect();
    boxes.sort_by_key(|b| b.vehicle_id);
    (img, boxes)
}

fn radar_rng(scene: &Scene) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
    rng.set_stream(scene.time.to_bits());
    rng
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a = PI;
    }
    a
}

/// Simulated radar sweep of `scene`.
///
/// Each vehicle contributes `points_per_vehicle` returns sampled uniformly on
/// its vertical face turned most toward the radar. Radial velocity is the
/// vehicle velocity projected on the line of sight (negative when
/// approaching). Returns from behind the radar plane are not reported.
pub fn sample_radar(scene: &Scene, noise: &RadarNoiseModel) -> RadarFrame {
    let mut rng = radar_rng(scene);
    let from_world = scene.rig.radar_to_world.inverse();
    let origin = scene.rig.radar_position();
    let mut detections = Vec::new();
    for v in &scene.vehicles {
        let to_radar = sub3(&origin, &v.center);
        let (f, l) = (v.forward(), v.left());
        // (normal, half depth along normal, tangent, face width)
        let faces = [
            (f, v.extent[0] / 2.0, l, v.extent[1]),
            ([-f[0], -f[1], 0.0], v.extent[0] / 2.0, l, v.extent[1]),
            (l, v.extent[1] / 2.0, f, v.extent[0]),
            ([-l[0], -l[1], 0.0], v.extent[1] / 2.0, f, v.extent[0]),
        ];
        let (n, half, t, width) = faces
            .iter()
            .copied()
            .max_by(|a, b| dot3(&a.0, &to_radar).total_cmp(&dot3(&b.0, &to_radar)))
            .expect("four faces");
        let vel = v.velocity();
        for _ in 0..noise.points_per_vehicle {
            let u: f64 = rng.random_range(-0.5..0.5);
            let z: f64 = rng.random_range(0.1..0.9);
            let drop: f64 = rng.random();
            let noise_draws = [gauss(&mut rng, noise.sigma_rho), gauss(&mut rng, noise.sigma_theta), gauss(&mut rng, noise.sigma_theta), gauss(&mut rng, noise.sigma_v)];
            if drop < noise.dropout_p {
                continue;
            }
            let p_w = [
                v.center[0] + n[0] * half + t[0] * u * width,
                v.center[1] + n[1] * half + t[1] * u * width,
                v.center[2] - v.extent[2] / 2.0 + z * v.extent[2],
            ];
            let p_r = from_world.apply(&p_w);
            if p_r[0] <= 0.0 {
                continue;
            }
            let los = sub3(&p_w, &origin);
            let range = norm3(&los);
            let radial = if range > 0.0 { dot3(&vel, &los) / range } else { 0.0 };
            let exact = cartesian_to_polar(&p_r, radial);
            detections.push(crate::geometry::RadarDetection {
                rho: (exact.rho + noise_draws[0]).max(0.0),
                theta: wrap_angle(exact.theta + noise_draws[1]),
                phi: (exact.phi + noise_draws[2]).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
                v: exact.v + noise_draws[3],
            });
        }
    }
    if noise.ghost_rate > 0.0 {
        let count = Poisson::new(noise.ghost_rate).map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
        for _ in 0..count {
            detections.push(crate::geometry::RadarDetection {
                rho: rng.random_range(2.0..60.0),
                theta: rng.random_range(-30f64..30.0).to_radians(),
                phi: rng.random_range(-5f64..5.0).to_radians(),
                v: rng.random_range(-15.0..15.0),
            });
        }
    }
    RadarFrame { timestamp: scene.time, detections }
}

/// Simulator and dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Square image side, pixels.
    pub image_size: u32,
    pub hfov_deg: f64,
    pub camera_pose: Pose,
    pub radar_pose: Pose,
    pub min_vehicles: u32,
    pub max_vehicles: u32,
    /// Spawn interval along road A, meters ahead of the camera.
    pub near_x: f64,
    pub far_x: f64,
    pub cross_road_x: f64,
    pub cross_road_half_length: f64,
    pub lane_offset: f64,
    pub max_speed: f64,
    /// Shared sensor period in synchronous mode, seconds.
    pub sensor_tick: f64,
    /// Camera at `camera_hz`, radar at `radar_hz`, aligned with `time_align`.
    pub asynchronous: bool,
    pub camera_hz: f64,
    pub radar_hz: f64,
    pub noise: RadarNoiseModel,
    pub splat_radius: u32,
    /// Boxes narrower or shorter than this are not annotated.
    pub min_box_px: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            image_size: 1080,
            hfov_deg: 60.0,
            camera_pose: Pose { position: [0.0, 0.0, 6.0], ypr_deg: [0.0, 15.0, 0.0] },
            radar_pose: Pose { position: [0.5, 0.0, 5.0], ypr_deg: [0.0, 10.0, 0.0] },
            min_vehicles: 1,
            max_vehicles: 4,
            near_x: 10.0,
            far_x: 35.0,
            cross_road_x: 22.0,
            cross_road_half_length: 10.0,
            lane_offset: 1.75,
            max_speed: 15.0,
            sensor_tick: 0.05,
            asynchronous: false,
            camera_hz: 20.0,
            radar_hz: 13.0,
            noise: RadarNoiseModel::default(),
            splat_radius: 2,
            min_box_px: 2.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Small-image profile used for desk training.
    pub fn desk(image_size: u32) -> Self {
        SimConfig { image_size, splat_radius: 1, min_box_px: 4.0, ..SimConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        let ok = self.image_size >= 4
            && self.hfov_deg > 0.0
            && self.hfov_deg < 180.0
            && self.min_vehicles <= self.max_vehicles
            && self.near_x < self.far_x
            && self.sensor_tick > 0.0
            && self.camera_hz > 0.0
            && self.radar_hz > 0.0
            && self.max_speed >= 0.0
            && self.min_box_px >= 0.0;
        if !ok {
            return Err(CoreError::invalid("invalid simulator configuration"));
        }
        self.rig_file().to_rig().map(|_| ())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::centered(self.image_size, self.image_size, self.hfov_deg)
    }

    pub fn rig_file(&self) -> RigFile {
        RigFile { radar_pose: self.radar_pose, camera_pose: self.camera_pose, intrinsics: self.intrinsics() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| CoreError::json("simulator config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Random initial scene for one dataset frame.
pub fn spawn_scene(cfg: &SimConfig, rig: SensorRig, index: u64) -> Scene {
    let mut rng = frame_rng(cfg.seed, index);
    let n = rng.random_range(cfg.min_vehicles..=cfg.max_vehicles);
    let mut vehicles: Vec<Vehicle> = Vec::new();
    for id in 0..n {
        for _attempt in 0..20 {
            let extent = [rng.random_range(4.0..5.0), rng.random_range(1.7..2.0), rng.random_range(1.4..1.8)];
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (center_xy, heading) = if rng.random::<bool>() {
                let x = rng.random_range(cfg.near_x..cfg.far_x);
                // right-hand traffic: the +y lane drives toward the camera
                ([x, side * cfg.lane_offset], if side > 0.0 { std::f64::consts::PI } else { 0.0 })
            } else {
                let y = rng.random_range(-cfg.cross_road_half_length..cfg.cross_road_half_length);
                let heading = side * std::f64::consts::FRAC_PI_2;
                ([cfg.cross_road_x - side * cfg.lane_offset, y], heading)
            };
            let speed = rng.random_range(0.0..=cfg.max_speed);
            let color = PALETTE[rng.random_range(0..PALETTE.len())];
            let clear = vehicles
                .iter()
                .all(|v| (v.center[0] - center_xy[0]).hypot(v.center[1] - center_xy[1]) >= 6.0);
            if clear {
                vehicles.push(Vehicle {
                    id,
                    center: [center_xy[0], center_xy[1], extent[2] / 2.0],
                    extent,
                    heading,
                    speed,
                    color,
                });
                break;
            }
        }
    }
    Scene { vehicles, rig, time: 0.0, rng_seed: rng.random() }
}

fn scene_at(scene: &Scene, t: f64) -> Result<Scene> {
    if t > scene.time {
        step_scene(scene, t - scene.time)
    } else {
        Ok(scene.clone())
    }
}

/// Everything generated for one dataset frame.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub index: u64,
    pub vision: RgbImage,
    pub boxes: Vec<VisionBox>,
    pub radar: RadarFrame,
    pub radar_image: RgbImage,
}

pub fn generate_frame(cfg: &SimConfig, rig: &SensorRig, index: u64) -> Result<SimFrame> {
    let base = spawn_scene(cfg, *rig, index);
    let mut tick_rng = frame_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, index);
    let (camera_t, radar) = if cfg.asynchronous {
        let k = tick_rng.random_range(1..=8u32);
        let t = k as f64 / cfg.camera_hz;
        let j = (t * cfg.radar_hz).floor();
        let (t0, t1) = (j / cfg.radar_hz, (j + 1.0) / cfg.radar_hz);
        let frames = [
            sample_radar(&scene_at(&base, t0)?, &cfg.noise),
            sample_radar(&scene_at(&base, t1)?, &cfg.noise),
        ];
        let aligned = time_align(&frames, &[t], AlignGate::default())?;
        (t, aligned.into_iter().next().expect("one timestamp in, one frame out"))
    } else {
        let t = tick_rng.random_range(1..=8u32) as f64 * cfg.sensor_tick;
        (t, sample_radar(&scene_at(&base, t)?, &cfg.noise))
    };
    let scene = scene_at(&base, camera_t)?;
    let (vision, boxes) = render_vision(&scene);
    let boxes = boxes
        .into_iter()
        .filter(|b| b.bbox[2] - b.bbox[0] >= cfg.min_box_px && b.bbox[3] - b.bbox[1] >= cfg.min_box_px)
        .collect();
    let (radar_image, _) = render_radar_frame(&radar, rig, cfg.image_size, cfg.image_size, cfg.splat_radius);
    Ok(SimFrame { index, vision, boxes, radar, radar_image })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| CoreError::invalid(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// 5.5 : 2.5 : 2 partition of `n` by largest remainder; remainder ties go to
/// the earlier split.
pub fn split_counts(n: usize) -> SplitCounts {
    const WEIGHTS: [usize; 3] = [11, 5, 4];
    const TOTAL: usize = 20;
    let mut counts = WEIGHTS.map(|w| n * w / TOTAL);
    let rems = WEIGHTS.map(|w| n * w % TOTAL);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    SplitCounts { train: counts[0], val: counts[1], test: counts[2] }
}

/// Seeded assignment of frame indices to splits, each list ascending.
pub fn assign_splits(n: usize, seed: u64) -> [Vec<usize>; 3] {
    let counts = split_counts(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut frame_rng(seed, u64::MAX));
    let mut train = idx[..counts.train].to_vec();
    let mut val = idx[counts.train..counts.train + counts.val].to_vec();
    let mut test = idx[counts.train + counts.val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    [train, val, test]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_frames: usize,
    pub image_size: u32,
    pub splits: SplitCounts,
    pub annotations: usize,
}

pub fn frame_stem(index: usize) -> String {
    format!("frame_{index:06}")
}

pub const MIN_FRAMES: usize = 10;

/// Writes a complete dataset under `out_dir`:
///
/// ```text
/// out_dir/{train,val,test}/{vision,radar_png,radar_raw}/frame_NNNNNN.{png,json}
/// out_dir/annotations_{split}.json
/// out_dir/rig.json, out_dir/sim_config.json, out_dir/manifest.json
/// ```
pub fn emit_dataset(cfg: &SimConfig, n_frames: usize, out_dir: &Path) -> Result<DatasetManifest> {
    if n_frames < MIN_FRAMES {
        return Err(CoreError::invalid(format!("need at least {MIN_FRAMES} frames, got {n_frames}")));
    }
    cfg.validate()?;
    let rig = cfg.rig_file().to_rig()?;
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| CoreError::io(p, e));
    mkdir(out_dir)?;
    let splits = assign_splits(n_frames, cfg.seed);
    let mut total_annotations = 0;
    for (split, frames) in Split::ALL.iter().zip(&splits) {
        let split_dir = out_dir.join(split.name());
        for sub in ["vision", "radar_png", "radar_raw"] {
            mkdir(&split_dir.join(sub))?;
        }
        let boxes: Vec<Vec<VisionBox>> = frames
            .par_iter()
            .map(|&i| {
                let frame = generate_frame(cfg, &rig, i as u64)?;
                let stem = frame_stem(i);
                frame.vision.write_png(split_dir.join("vision").join(format!("{stem}.png")))?;
                frame.radar_image.write_png(split_dir.join("radar_png").join(format!("{stem}.png")))?;
                write_json(
                    split_dir.join("radar_raw").join(format!("{stem}.json")),
                    &RadarFrameJson::from(&frame.radar),
                )?;
                Ok(frame.boxes)
            })
            .collect::<Result<_>>()?;
        let mut set = AnnotationSet {
            categories: vec![Category { id: VEHICLE_CATEGORY, name: "vehicle".into() }],
            ..Default::default()
        };
        for (&i, frame_boxes) in frames.iter().zip(&boxes) {
            let image_id = i as u64 + 1;
            set.images.push(ImageRecord {
                id: image_id,
                file_name: format!("vision/{}.png", frame_stem(i)),
                width: cfg.image_size,
                height: cfg.image_size,
            });
            for b in frame_boxes {
                let bbox = xyxy_to_xywh(b.bbox);
                set.annotations.push(AnnotationRecord {
                    id: set.annotations.len() as u64 + 1,
                    image_id,
                    bbox,
                    category_id: VEHICLE_CATEGORY,
                    area: bbox[2] * bbox[3],
                });
            }
        }
        total_annotations += set.annotations.len();
        write_json(out_dir.join(format!("annotations_{}.json", split.name())), &set)?;
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        n_frames,
        image_size: cfg.image_size,
        splits: split_counts(n_frames),
        annotations: total_annotations,
    };
    write_json(out_dir.join("rig.json"), &cfg.rig_file())?;
    std::fs::write(out_dir.join("sim_config.json"), to_json_string(cfg)?)
        .map_err(|e| CoreError::io(out_dir.join("sim_config.json"), e))?;
    write_json(out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SensorRig;

    fn desk_rig(size: u32) -> SensorRig {
        SimConfig::desk(size).rig_file().to_rig().unwrap()
    }

    fn car(id: u32, center: Vec3, heading: f64, speed: f64) -> Vehicle {
        Vehicle { id, center, extent: [4.5, 1.8, 1.5], heading, speed, color: [200, 30, 30] }
    }

    fn scene(vehicles: Vec<Vehicle>) -> Scene {
        Scene { vehicles, rig: desk_rig(128), time: 0.0, rng_seed: 7 }
    }

    #[test]
    fn static_vehicles_only_advance_time() {
        let s = scene(vec![car(0, [20.0, 0.0, 0.75], 0.3, 0.0)]);
        let n = step_scene(&s, 0.5).unwrap();
        assert_eq!(n.vehicles, s.vehicles);
        assert_eq!(n.time, 0.5);
    }

    #[test]
    fn kinematics() {
        let s = scene(vec![car(0, [20.0, 0.0, 0.75], 0.0, 10.0)]);
        let n = step_scene(&s, 0.1).unwrap();
        assert!((n.vehicles[0].center[0] - 21.0).abs() < 1e-12);
        let two = step_scene(&step_scene(&s, 0.05).unwrap(), 0.05).unwrap();
        assert!((two.vehicles[0].center[0] - n.vehicles[0].center[0]).abs() < 1e-12);
        assert!(step_scene(&s, 0.0).is_err());
    }

    #[test]
    fn empty_scene_is_gray() {
        let (img, boxes) = render_vision(&scene(vec![]));
        assert!(boxes.is_empty());
        assert!(img.data.chunks(3).all(|p| p == BACKGROUND));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_counts(3176), SplitCounts { train: 1747, val: 794, test: 635 });
        assert_eq!(split_counts(20), SplitCounts { train: 11, val: 5, test: 4 });
        for n in 10..200 {
            let c = split_counts(n);
            assert_eq!(c.train + c.val + c.test, n);
        }
    }

    #[test]
    fn splits_partition_indices() {
        let [a, b, c] = assign_splits(37, 3);
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_eq!(assign_splits(37, 3), [a, b, c]);
    }

    #[test]
    fn dropout_one_leaves_ghosts_only() {
        let s = scene(vec![car(0, [20.0, 0.0, 0.75], 0.0, 5.0)]);
        let noise = RadarNoiseModel { dropout_p: 1.0, ghost_rate: 3.0, ..RadarNoiseModel::default() };
        let f = sample_radar(&s, &noise);
        let ghosts = sample_radar(&s, &RadarNoiseModel { ghost_rate: 3.0, ..noise });
        assert_eq!(f, ghosts);
        let none = sample_radar(&s, &RadarNoiseModel { ghost_rate: 0.0, ..noise });
        assert!(none.detections.is_empty());
    }

    #[test]
    fn radar_is_deterministic_in_seed_and_time() {
        let s = scene(vec![car(0, [20.0, 0.0, 0.75], 0.0, 5.0)]);
        let noise = RadarNoiseModel::default();
        assert_eq!(sample_radar(&s, &noise), sample_radar(&s, &noise));
        let later = Scene { time: 0.1, ..s.clone() };
        assert_ne!(sample_radar(&s, &noise), sample_radar(&later, &noise));
    }

    #[test]
    fn sim_config_json_round_trip() {
        let cfg = SimConfig::desk(128);
        let text = to_json_string(&cfg).unwrap();
        assert_eq!(SimConfig::from_json(&text).unwrap(), cfg);
        assert!(SimConfig::from_json(r#"{"image_size": 64, "bogus": 1}"#).is_err());
    }
}
