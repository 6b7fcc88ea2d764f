//! Coordinate chain from polar radar returns to the camera pixel plane.
//!
//! Frames:
//! - radar: `x` along the boresight, `y` left, `z` up; detections are polar
//!   `(ρ, θ, φ)` in this frame.
//! - world: fixed scene frame, `z` up.
//! - camera: optical frame, `x` right, `y` down, `z` along the optical axis.
//!
//! A point travels radar → world → camera → pixel. The full chain is
//! `z_c·[x_p, y_p, 1]ᵀ = K · [R_wc | T_wc] · [R_rw | T_rw] · [p_r; 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-12;

const ORTHO_TOL: f64 = 1e-9;

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rotation taking a body-frame vector (x forward, y left, z up) into the
/// camera optical frame (x right, y down, z forward).
pub const OPTICAL_FROM_BODY: Mat3 = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// `Rz(yaw)·Ry(pitch)·Rx(roll)`, angles in radians.
pub fn rotation_from_ypr(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    mat_mul(&mat_mul(&rz, &ry), &rx)
}

/// One radar return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarDetection {
    /// Range, meters.
    pub rho: f64,
    /// Azimuth, radians, positive toward radar `+y`.
    pub theta: f64,
    /// Elevation, radians, positive toward radar `+z`.
    pub phi: f64,
    /// Radial velocity, m/s; positive when receding.
    pub v: f64,
}

impl RadarDetection {
    pub fn new(rho: f64, theta: f64, phi: f64, v: f64) -> Result<Self> {
        let det = RadarDetection { rho, theta, phi, v };
        det.validate()?;
        Ok(det)
    }

    pub fn from_degrees(rho: f64, theta_deg: f64, phi_deg: f64, v: f64) -> Result<Self> {
        Self::new(rho, theta_deg.to_radians(), phi_deg.to_radians(), v)
    }

    pub fn validate(&self) -> Result<()> {
        let pi = std::f64::consts::PI;
        let finite = [self.rho, self.theta, self.phi, self.v].iter().all(|v| v.is_finite());
        if !finite
            || self.rho < 0.0
            || self.theta <= -pi
            || self.theta > pi
            || self.phi < -pi / 2.0
            || self.phi > pi / 2.0
        {
            return Err(CoreError::invalid(format!("radar detection out of domain: {self:?}")));
        }
        Ok(())
    }
}

/// Polar radar return to radar-frame Cartesian coordinates.
pub fn polar_to_cartesian(det: &RadarDetection) -> Vec3 {
    let (st, ct) = det.theta.sin_cos();
    let (sp, cp) = det.phi.sin_cos();
    [det.rho * ct * cp, det.rho * st * cp, det.rho * sp]
}

/// Inverse of [`polar_to_cartesian`] (with `v` supplied separately).
pub fn cartesian_to_polar(p: &Vec3, v: f64) -> RadarDetection {
    let rho = norm3(p);
    let theta = p[1].atan2(p[0]);
    let theta = if theta <= -std::f64::consts::PI { std::f64::consts::PI } else { theta };
    let phi = if rho > 0.0 { (p[2] / rho).clamp(-1.0, 1.0).asin() } else { 0.0 };
    RadarDetection { rho, theta, phi, v }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: IDENTITY3,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let t = RigidTransform { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = mat_mul(&transpose(&self.rotation), &self.rotation);
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if !v.is_finite() || (v - expect).abs() > ORTHO_TOL {
                    return Err(CoreError::invalid("rotation is not orthonormal"));
                }
            }
        }
        if (det(&self.rotation) - 1.0).abs() > ORTHO_TOL {
            return Err(CoreError::invalid("rotation has determinant != +1"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(CoreError::invalid("translation is not finite"));
        }
        Ok(())
    }

    pub fn translation(t: Vec3) -> Self {
        RigidTransform { rotation: IDENTITY3, translation: t }
    }

    /// Pose of a body in the world: maps body coordinates to world coordinates.
    pub fn from_pose(position: Vec3, ypr_deg: Vec3) -> Self {
        RigidTransform {
            rotation: rotation_from_ypr(
                ypr_deg[0].to_radians(),
                ypr_deg[1].to_radians(),
                ypr_deg[2].to_radians(),
            ),
            translation: position,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        add3(&mat_vec(&self.rotation, p), &self.translation)
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: mat_mul(&self.rotation, &inner.rotation),
            translation: self.apply(&inner.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, &self.translation);
        RigidTransform { rotation: rt, translation: [-t[0], -t[1], -t[2]] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length, meters.
    pub f: f64,
    /// Pixel pitch, meters per pixel.
    pub dx: f64,
    pub dy: f64,
    /// Principal point, pixels.
    pub x_p0: f64,
    pub y_p0: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view.
    pub fn centered(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = 0.004;
        let focal_px = width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        let pitch = f / focal_px;
        CameraIntrinsics {
            f,
            dx: pitch,
            dy: pitch,
            x_p0: width as f64 / 2.0,
            y_p0: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.f > 0.0
            && self.dx > 0.0
            && self.dy > 0.0
            && self.x_p0 >= 0.0
            && self.x_p0 < self.width as f64
            && self.y_p0 >= 0.0
            && self.y_p0 < self.height as f64;
        if !ok {
            return Err(CoreError::invalid(format!("invalid camera intrinsics: {self:?}")));
        }
        Ok(())
    }

    /// Focal lengths in pixels, `(f/dx, f/dy)`.
    pub fn focal_px(&self) -> (f64, f64) {
        (self.f / self.dx, self.f / self.dy)
    }

    /// `M₁·[f 0 0; 0 f 0; 0 0 1]`, the 3×3 pixel-from-camera matrix.
    pub fn matrix(&self) -> Mat3 {
        let (fx, fy) = self.focal_px();
        [[fx, 0.0, self.x_p0], [0.0, fy, self.y_p0], [0.0, 0.0, 1.0]]
    }

    pub fn contains(&self, x_p: f64, y_p: f64) -> bool {
        x_p >= 0.0 && x_p < self.width as f64 && y_p >= 0.0 && y_p < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRig {
    pub radar_to_world: RigidTransform,
    pub world_to_camera: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

impl SensorRig {
    /// Builds a rig from sensor poses. Both poses describe a body frame
    /// (x forward, y left, z up) in world coordinates; the camera's optical
    /// frame is fixed relative to its body frame by [`OPTICAL_FROM_BODY`].
    pub fn from_poses(
        radar_position: Vec3,
        radar_ypr_deg: Vec3,
        camera_position: Vec3,
        camera_ypr_deg: Vec3,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        let radar_to_world = RigidTransform::from_pose(radar_position, radar_ypr_deg);
        let body_to_world = RigidTransform::from_pose(camera_position, camera_ypr_deg);
        let optical = RigidTransform { rotation: OPTICAL_FROM_BODY, translation: [0.0; 3] };
        let rig = SensorRig {
            radar_to_world,
            world_to_camera: optical.compose(&body_to_world.inverse()),
            intrinsics,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        self.radar_to_world.validate()?;
        self.world_to_camera.validate()?;
        self.world_to_camera.compose(&self.radar_to_world).validate()?;
        self.intrinsics.validate()
    }

    pub fn radar_to_camera(&self) -> RigidTransform {
        self.world_to_camera.compose(&self.radar_to_world)
    }

    /// Camera center expressed in world coordinates.
    pub fn camera_position(&self) -> Vec3 {
        self.world_to_camera.inverse().translation
    }

    pub fn radar_position(&self) -> Vec3 {
        self.radar_to_world.translation
    }

    /// The 3×4 homogeneous matrix `K·[R_wc|T_wc]·[R_rw|T_rw]` (top three rows).
    pub fn projection_matrix(&self) -> [[f64; 4]; 3] {
        let rc = self.radar_to_camera();
        let k = self.intrinsics.matrix();
        let kr = mat_mul(&k, &rc.rotation);
        let kt = mat_vec(&k, &rc.translation);
        let mut p = [[0.0; 4]; 3];
        for i in 0..3 {
            p[i][..3].copy_from_slice(&kr[i]);
            p[i][3] = kt[i];
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    /// Continuous pixel coordinates; `0.0` when the point is behind the camera.
    pub x_p: f64,
    pub y_p: f64,
    /// Camera-frame depth, meters.
    pub z_c: f64,
    pub in_frame: bool,
}

impl ProjectionResult {
    pub fn is_behind(&self) -> bool {
        self.z_c <= MIN_DEPTH
    }
}

pub fn world_from_radar(p: &Vec3, rig: &SensorRig) -> Vec3 {
    rig.radar_to_world.apply(p)
}

pub fn camera_from_world(p: &Vec3, rig: &SensorRig) -> Vec3 {
    rig.world_to_camera.apply(p)
}

/// Perspective projection through the intrinsics.
pub fn pixel_from_camera(p_c: &Vec3, k: &CameraIntrinsics) -> ProjectionResult {
    let z_c = p_c[2];
    if z_c <= MIN_DEPTH {
        return ProjectionResult { x_p: 0.0, y_p: 0.0, z_c, in_frame: false };
    }
    let (fx, fy) = k.focal_px();
    let x_p = fx * (p_c[0] / z_c) + k.x_p0;
    let y_p = fy * (p_c[1] / z_c) + k.y_p0;
    ProjectionResult { x_p, y_p, z_c, in_frame: k.contains(x_p, y_p) }
}

/// Back-projects a pixel at known depth into camera coordinates.
pub fn camera_from_pixel(x_p: f64, y_p: f64, z_c: f64, k: &CameraIntrinsics) -> Vec3 {
    let (fx, fy) = k.focal_px();
    [(x_p - k.x_p0) * z_c / fx, (y_p - k.y_p0) * z_c / fy, z_c]
}

/// Full radar-to-pixel chain.
pub fn project_radar_to_pixel(det: &RadarDetection, rig: &SensorRig) -> ProjectionResult {
    let p_r = polar_to_cartesian(det);
    let p_w = world_from_radar(&p_r, rig);
    let p_c = camera_from_world(&p_w, rig);
    pixel_from_camera(&p_c, &rig.intrinsics)
}

/// Projects a world point straight to the pixel plane.
pub fn project_world_point(p_w: &Vec3, rig: &SensorRig) -> ProjectionResult {
    pixel_from_camera(&camera_from_world(p_w, rig), &rig.intrinsics)
}
