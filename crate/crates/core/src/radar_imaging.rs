//! Radar point clouds rendered as RGB images, and radar/camera time alignment.
//!
//! Each projected radar return paints a small disc whose color encodes range
//! in the red channel and radial velocity in the green and blue channels:
//!
//! ```text
//! R = 128(d + 20)/250 + 127
//! G = 128(v + 40)/50  + 127
//! B = 128(v − 20)/50  + 127
//! ```
//!
//! Values are rounded half-up and clamped to `[0, 255]`. Pixels without a
//! radar return stay black.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{project_radar_to_pixel, RadarDetection, SensorRig};
use crate::image::RgbImage;

pub type RgbTriple = [u8; 3];

/// Default disc radius in pixels.
pub const DEFAULT_SPLAT_RADIUS: u32 = 2;

/// Default half-width of the angular matching gate, degrees.
pub const DEFAULT_GATE_DEG: f64 = 2.0;

fn to_byte(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Red channel for a range `d` in meters.
pub fn red_level(d: f64) -> f64 {
    128.0 * (d + 20.0) / 250.0 + 127.0
}

/// Green channel for a radial velocity `v` in m/s.
pub fn green_level(v: f64) -> f64 {
    128.0 * (v + 40.0) / 50.0 + 127.0
}

/// Blue channel for a radial velocity `v` in m/s.
pub fn blue_level(v: f64) -> f64 {
    128.0 * (v - 20.0) / 50.0 + 127.0
}

/// Quantizes range and radial velocity into an RGB triple.
pub fn quantize_rgb(d: f64, v: f64) -> RgbTriple {
    [to_byte(red_level(d)), to_byte(green_level(v)), to_byte(blue_level(v))]
}

/// Radial velocity recovered from an unsaturated green value.
pub fn velocity_from_green(g: u8) -> f64 {
    (g as f64 - 127.0) * 50.0 / 128.0 - 40.0
}

/// Range recovered from an unsaturated red value.
pub fn range_from_red(r: u8) -> f64 {
    (r as f64 - 127.0) * 250.0 / 128.0 - 20.0
}

/// All returns of one radar sweep. An empty detection list is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarFrame {
    pub timestamp: f64,
    pub detections: Vec<RadarDetection>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderStats {
    /// Detections that landed in the image.
    pub painted: usize,
    /// Detections behind the camera or outside the frame.
    pub dropped: usize,
}

/// Renders one radar frame at `width × height`.
///
/// Projections are computed at the rig's native resolution and rescaled when
/// `width × height` differs. Each in-frame detection paints a disc of
/// `splat_radius` around its rounded pixel position. Where discs
/// overlap, the detection with the smaller range wins.
pub fn render_radar_frame(
    frame: &RadarFrame,
    rig: &SensorRig,
    width: u32,
    height: u32,
    splat_radius: u32,
) -> (RgbImage, RenderStats) {
    let mut img = RgbImage::new(width, height);
    let mut depth = vec![f64::INFINITY; width as usize * height as usize];
    let mut stats = RenderStats::default();
    let sx = width as f64 / rig.intrinsics.width as f64;
    let sy = height as f64 / rig.intrinsics.height as f64;
    let r = splat_radius as i64;
    for det in &frame.detections {
        let p = project_radar_to_pixel(det, rig);
        if !p.in_frame {
            stats.dropped += 1;
            continue;
        }
        let cx = ((p.x_p * sx).round() as i64).clamp(0, width as i64 - 1);
        let cy = ((p.y_p * sy).round() as i64).clamp(0, height as i64 - 1);
        let color = quantize_rgb(det.rho, det.v);
        stats.painted += 1;
        for y in (cy - r).max(0)..=(cy + r).min(height as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(width as i64 - 1) {
                if (x - cx).pow(2) + (y - cy).pow(2) > r * r {
                    continue;
                }
                let idx = y as usize * width as usize + x as usize;
                if det.rho < depth[idx] {
                    depth[idx] = det.rho;
                    img.set(x as u32, y as u32, color);
                }
            }
        }
    }
    (img, stats)
}

/// Number of pixels in a disc of the given radius on the integer grid.
pub fn disc_area(radius: u32) -> usize {
    let r = radius as i64;
    (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| (x, y)))
        .filter(|(x, y)| x * x + y * y <= r * r)
        .count()
}

/// Angular gate for matching returns between two radar frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignGate {
    /// Maximum azimuth difference, radians.
    pub theta: f64,
    /// Maximum elevation difference, radians.
    pub phi: f64,
}

impl Default for AlignGate {
    fn default() -> Self {
        let g = DEFAULT_GATE_DEG.to_radians();
        AlignGate { theta: g, phi: g }
    }
}

/// One-to-one greedy matching of returns by angular distance within the gate.
fn match_returns(a: &[RadarDetection], b: &[RadarDetection], gate: AlignGate) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, da) in a.iter().enumerate() {
        for (j, db) in b.iter().enumerate() {
            let dt = (da.theta - db.theta).abs();
            let dp = (da.phi - db.phi).abs();
            if dt <= gate.theta && dp <= gate.phi {
                pairs.push((dt.hypot(dp), i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Resamples radar frames at camera timestamps.
///
/// For each camera time `t` the bracketing radar frames are found. A return
/// present in both brackets (matched within `gate`) has its range and radial
/// velocity linearly interpolated and keeps the angles of the nearer frame.
/// Unmatched returns of the nearer frame are copied; unmatched returns of the
/// farther frame are dropped. The earlier frame is "nearer" on exact ties.
pub fn time_align(radar: &[RadarFrame], camera_timestamps: &[f64], gate: AlignGate) -> Result<Vec<RadarFrame>> {
    let (Some(first), Some(last)) = (radar.first(), radar.last()) else {
        return Err(CoreError::invalid("time_align needs at least one radar frame"));
    };
    if radar.windows(2).any(|w| !(w[0].timestamp <= w[1].timestamp)) {
        return Err(CoreError::invalid("radar frames must be sorted by timestamp"));
    }
    camera_timestamps
        .iter()
        .map(|&t| {
            if !(t >= first.timestamp && t <= last.timestamp) {
                return Err(CoreError::TimestampOutOfRange { t, first: first.timestamp, last: last.timestamp });
            }
            if let Some(exact) = radar.iter().find(|f| f.timestamp == t) {
                return Ok(exact.clone());
            }
            // first frame strictly after t; t is strictly inside (i-1, i)
            let hi = radar.partition_point(|f| f.timestamp <= t);
            let (a, b) = (&radar[hi - 1], &radar[hi]);
            let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
            let a_is_near = w <= 0.5;
            let pairs = match_returns(&a.detections, &b.detections, gate);
            let (near, far) = if a_is_near { (a, b) } else { (b, a) };
            let mut partner: Vec<Option<usize>> = vec![None; near.detections.len()];
            for (i, j) in pairs {
                let (ni, fj) = if a_is_near { (i, j) } else { (j, i) };
                partner[ni] = Some(fj);
            }
            let detections = near
                .detections
                .iter()
                .zip(&partner)
                .map(|(dn, p)| match p {
                    Some(fj) => {
                        let df = &far.detections[*fj];
                        let (da, db) = if a_is_near { (dn, df) } else { (df, dn) };
                        RadarDetection {
                            rho: (1.0 - w) * da.rho + w * db.rho,
                            v: (1.0 - w) * da.v + w * db.v,
                            ..*dn
                        }
                    }
                    None => *dn,
                })
                .collect();
            Ok(RadarFrame { timestamp: t, detections })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, RigidTransform, OPTICAL_FROM_BODY};

    fn det(rho: f64, theta_deg: f64, v: f64) -> RadarDetection {
        RadarDetection::from_degrees(rho, theta_deg, 0.0, v).unwrap()
    }

    fn boresight_rig(size: u32) -> SensorRig {
        SensorRig {
            radar_to_world: RigidTransform::new(OPTICAL_FROM_BODY, [0.0; 3]).unwrap(),
            world_to_camera: RigidTransform::IDENTITY,
            intrinsics: CameraIntrinsics::centered(size, size, 60.0),
        }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_rgb(-20.0, 0.0)[0], 127);
        let c = quantize_rgb(0.0, -40.0);
        assert_eq!((c[1], c[2]), (127, 0));
        assert_eq!(quantize_rgb(105.0, 20.0), [191, 255, 127]);
    }

    #[test]
    fn half_values_round_up() {
        // 128(d+20)/250 + 127 = 127.5 at d = 20/128 − 20
        assert_eq!(quantize_rgb(250.0 * 0.5 / 128.0 - 20.0, -40.0)[0], 128);
    }

    #[test]
    fn empty_frame_renders_black() {
        let frame = RadarFrame { timestamp: 0.0, detections: vec![] };
        let (img, stats) = render_radar_frame(&frame, &boresight_rig(64), 64, 64, 2);
        assert_eq!(img.count_nonzero(), 0);
        assert_eq!(stats, RenderStats::default());
    }

    #[test]
    fn single_point_hits_principal_point() {
        let frame = RadarFrame { timestamp: 0.0, detections: vec![det(30.0, 0.0, -5.0)] };
        let (img, stats) = render_radar_frame(&frame, &boresight_rig(64), 64, 64, 0);
        assert_eq!(img.count_nonzero(), 1);
        assert_eq!(img.get(32, 32), quantize_rgb(30.0, -5.0));
        assert_eq!(stats.painted, 1);
    }

    #[test]
    fn nearer_return_wins_collisions() {
        let frame = RadarFrame { timestamp: 0.0, detections: vec![det(50.0, 0.0, 3.0), det(10.0, 0.0, -3.0)] };
        let (img, _) = render_radar_frame(&frame, &boresight_rig(64), 64, 64, 1);
        assert_eq!(img.get(32, 32), quantize_rgb(10.0, -3.0));
        let reversed = RadarFrame { timestamp: 0.0, detections: frame.detections.iter().rev().cloned().collect() };
        assert_eq!(render_radar_frame(&reversed, &boresight_rig(64), 64, 64, 1).0, img);
    }

    #[test]
    fn out_of_frame_returns_are_counted() {
        let frame = RadarFrame { timestamp: 0.0, detections: vec![det(10.0, 170.0, 0.0), det(10.0, 80.0, 0.0)] };
        let (img, stats) = render_radar_frame(&frame, &boresight_rig(64), 64, 64, 2);
        assert_eq!(img.count_nonzero(), 0);
        assert_eq!(stats.dropped, 2);
    }

    #[test]
    fn disc_areas() {
        assert_eq!(disc_area(0), 1);
        assert_eq!(disc_area(1), 5);
        assert_eq!(disc_area(2), 13);
    }

    #[test]
    fn midpoint_interpolation() {
        let frames = vec![
            RadarFrame { timestamp: 0.0, detections: vec![det(10.0, 1.0, -4.0)] },
            RadarFrame { timestamp: 1.0, detections: vec![det(12.0, 1.5, -2.0)] },
        ];
        let out = time_align(&frames, &[0.5], AlignGate::default()).unwrap();
        assert_eq!(out[0].timestamp, 0.5);
        assert!((out[0].detections[0].rho - 11.0).abs() < 1e-12);
        assert!((out[0].detections[0].v + 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_timestamp_returns_frame() {
        let frames = vec![
            RadarFrame { timestamp: 0.0, detections: vec![det(10.0, 1.0, -4.0)] },
            RadarFrame { timestamp: 1.0, detections: vec![det(12.0, 1.5, -2.0), det(3.0, -20.0, 0.0)] },
        ];
        let out = time_align(&frames, &[1.0, 0.0], AlignGate::default()).unwrap();
        assert_eq!(out[0], frames[1]);
        assert_eq!(out[1], frames[0]);
    }

    #[test]
    fn dropped_target_is_copied_from_nearer_frame() {
        let frames = vec![
            RadarFrame { timestamp: 0.0, detections: vec![det(10.0, 1.0, -4.0), det(20.0, -15.0, 1.0)] },
            RadarFrame { timestamp: 1.0, detections: vec![det(12.0, 1.5, -2.0)] },
        ];
        let out = time_align(&frames, &[0.3], AlignGate::default()).unwrap();
        let dets = &out[0].detections;
        assert_eq!(dets.len(), 2);
        assert!((dets[0].rho - 10.6).abs() < 1e-12);
        assert_eq!(dets[1], frames[0].detections[1]);
        // from the far side the lone target disappears
        let out = time_align(&frames, &[0.8], AlignGate::default()).unwrap();
        assert_eq!(out[0].detections.len(), 1);
    }

    #[test]
    fn out_of_range_timestamp_is_named() {
        let frames = vec![RadarFrame { timestamp: 0.0, detections: vec![] }, RadarFrame { timestamp: 1.0, detections: vec![] }];
        let err = time_align(&frames, &[1.5], AlignGate::default()).unwrap_err();
        assert!(err.to_string().contains("1.5"), "{err}");
    }
}
