//! Rig description files.
//!
//! ```json
//! { "radar_pose":  { "position": [x, y, z], "ypr_deg": [yaw, pitch, roll] },
//!   "camera_pose": { "position": [x, y, z], "ypr_deg": [yaw, pitch, roll] },
//!   "intrinsics":  { "f": 0.004, "dx": 4e-6, "dy": 4e-6, "x_p0": 540, "y_p0": 540,
//!                    "width": 1080, "height": 1080 } }
//! ```
//!
//! Poses place a body frame (x forward, y left, z up) in the world. Angles are
//! applied as `Rz(yaw)·Ry(pitch)·Rx(roll)`; positive pitch tilts the nose down.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{CameraIntrinsics, SensorRig, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub ypr_deg: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub radar_pose: Pose,
    pub camera_pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl RigFile {
    pub fn to_rig(&self) -> Result<SensorRig> {
        let finite = self
            .radar_pose
            .position
            .iter()
            .chain(&self.radar_pose.ypr_deg)
            .chain(&self.camera_pose.position)
            .chain(&self.camera_pose.ypr_deg)
            .all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::invalid("rig pose has non-finite values"));
        }
        SensorRig::from_poses(
            self.radar_pose.position,
            self.radar_pose.ypr_deg,
            self.camera_pose.position,
            self.camera_pose.ypr_deg,
            self.intrinsics,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rig: RigFile = serde_json::from_str(text).map_err(|e| CoreError::json("rig", e))?;
        rig.to_rig()?;
        Ok(rig)
    }
}
