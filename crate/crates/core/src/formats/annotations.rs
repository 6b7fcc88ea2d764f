//! COCO-style annotation sets and detection records.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const VEHICLE_CATEGORY: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub category_id: u64,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub categories: Vec<Category>,
}

/// One detection in `dets.json`: an annotation record plus a confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: u64,
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub category_id: u64,
    pub area: f64,
    pub score: f64,
}

/// `[x, y, w, h]` → `[x1, y1, x2, y2]`.
pub fn xywh_to_xyxy(b: [f64; 4]) -> [f64; 4] {
    [b[0], b[1], b[0] + b[2], b[1] + b[3]]
}

pub fn xyxy_to_xywh(b: [f64; 4]) -> [f64; 4] {
    [b[0], b[1], b[2] - b[0], b[3] - b[1]]
}

fn check_bbox(id: u64, bbox: &[f64; 4], area: f64) -> Result<()> {
    let bad = |message: String| Err(CoreError::Annotation { id, message });
    if !bbox.iter().all(|v| v.is_finite()) || !area.is_finite() {
        return bad("non-finite bbox or area".into());
    }
    if bbox[2] <= 0.0 || bbox[3] <= 0.0 {
        return bad(format!("degenerate bbox {bbox:?}"));
    }
    let expect = bbox[2] * bbox[3];
    if (area - expect).abs() > 1e-6 * expect.max(1.0) {
        return bad(format!("area {area} != w·h = {expect}"));
    }
    Ok(())
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(CoreError::invalid(format!("duplicate image id {}", img.id)));
            }
        }
        let mut category_ids = HashSet::new();
        for c in &self.categories {
            if !category_ids.insert(c.id) {
                return Err(CoreError::invalid(format!("duplicate category id {}", c.id)));
            }
        }
        let mut ann_ids = HashSet::new();
        for a in &self.annotations {
            if !ann_ids.insert(a.id) {
                return Err(CoreError::Annotation { id: a.id, message: "duplicate annotation id".into() });
            }
            if !image_ids.contains(&a.image_id) {
                return Err(CoreError::Annotation {
                    id: a.id,
                    message: format!("references missing image {}", a.image_id),
                });
            }
            if !category_ids.contains(&a.category_id) {
                return Err(CoreError::Annotation {
                    id: a.id,
                    message: format!("references missing category {}", a.category_id),
                });
            }
            check_bbox(a.id, &a.bbox, a.area)?;
        }
        Ok(())
    }

    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let set: AnnotationSet = serde_json::from_str(text).map_err(|e| CoreError::json("annotations", e))?;
        set.validate()?;
        Ok(set)
    }

    /// Ground-truth boxes of one image as `[x1, y1, x2, y2]`.
    pub fn boxes_for(&self, image_id: u64) -> Vec<[f64; 4]> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .map(|a| xywh_to_xyxy(a.bbox))
            .collect()
    }
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let dets: Vec<DetectionRecord> = serde_json::from_str(text).map_err(|e| CoreError::json("detections", e))?;
    for d in &dets {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(CoreError::Annotation { id: d.id, message: format!("score {} outside [0, 1]", d.score) });
        }
        check_bbox(d.id, &d.bbox, d.area)?;
    }
    Ok(dets)
}
