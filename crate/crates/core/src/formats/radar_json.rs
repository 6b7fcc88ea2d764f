//! Radar frames as JSON: `{"t": s, "detections": [{"rho", "theta_deg", "phi_deg", "v"}]}`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::RadarDetection;
use crate::radar_imaging::RadarFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionJson {
    pub rho: f64,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarFrameJson {
    pub t: f64,
    pub detections: Vec<DetectionJson>,
}

impl From<&RadarFrame> for RadarFrameJson {
    fn from(frame: &RadarFrame) -> Self {
        RadarFrameJson {
            t: frame.timestamp,
            detections: frame
                .detections
                .iter()
                .map(|d| DetectionJson {
                    rho: d.rho,
                    theta_deg: d.theta.to_degrees(),
                    phi_deg: d.phi.to_degrees(),
                    v: d.v,
                })
                .collect(),
        }
    }
}

impl RadarFrameJson {
    pub fn to_frame(&self) -> Result<RadarFrame> {
        if !self.t.is_finite() {
            return Err(CoreError::invalid("radar frame timestamp is not finite"));
        }
        let detections = self
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                RadarDetection::from_degrees(d.rho, d.theta_deg, d.phi_deg, d.v)
                    .map_err(|e| CoreError::invalid(format!("detection {i}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(RadarFrame { timestamp: self.t, detections })
    }
}

pub fn parse_radar_frame(text: &str) -> Result<RadarFrame> {
    let raw: RadarFrameJson = serde_json::from_str(text).map_err(|e| CoreError::json("radar frame", e))?;
    raw.to_frame()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal() {
        let f = parse_radar_frame(r#"{"t": 0.5, "detections": [{"rho": 10, "theta_deg": 90, "phi_deg": 0, "v": -3}]}"#).unwrap();
        assert_eq!(f.timestamp, 0.5);
        assert!((f.detections[0].theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn invalid_detection_rejected() {
        assert!(parse_radar_frame(r#"{"t": 0, "detections": [{"rho": -1, "theta_deg": 0, "phi_deg": 0, "v": 0}]}"#).is_err());
        assert!(parse_radar_frame(r#"{"t": 0, "detections": [{"rho": 1, "theta_deg": 0, "phi_deg": 95, "v": 0}]}"#).is_err());
    }

    #[test]
    fn empty_frame_is_valid() {
        assert!(parse_radar_frame(r#"{"t": 1, "detections": []}"#).unwrap().detections.is_empty());
    }
}
