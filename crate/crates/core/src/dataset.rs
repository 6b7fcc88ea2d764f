//! Loading emitted datasets back as paired samples.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::formats::annotations::AnnotationSet;
use crate::formats::radar_json::parse_radar_frame;
use crate::formats::read_json;
use crate::formats::rig::RigFile;
use crate::image::RgbImage;
use crate::radar_imaging::{render_radar_frame, DEFAULT_SPLAT_RADIUS};
use crate::scene_sim::{frame_stem, generate_frame, SimConfig, SimFrame, Split};

/// One camera image, its radar image and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: u64,
    pub stem: String,
    pub vision: RgbImage,
    pub radar: RgbImage,
    /// `[x1, y1, x2, y2]` pixels.
    pub boxes: Vec<[f64; 4]>,
}

impl Sample {
    /// Both images resized to `size × size`, boxes scaled to match.
    pub fn resized(&self, size: u32) -> Sample {
        let sx = size as f64 / self.vision.width as f64;
        let sy = size as f64 / self.vision.height as f64;
        Sample {
            image_id: self.image_id,
            stem: self.stem.clone(),
            vision: self.vision.resized(size, size),
            radar: self.radar.resized(size, size),
            boxes: self.boxes.iter().map(|b| [b[0] * sx, b[1] * sy, b[2] * sx, b[3] * sy]).collect(),
        }
    }

    /// In-memory sample for a simulated frame, numbered as in an emitted dataset.
    pub fn from_frame(f: &SimFrame) -> Sample {
        Sample {
            image_id: f.index + 1,
            stem: frame_stem(f.index as usize),
            vision: f.vision.clone(),
            radar: f.radar_image.clone(),
            boxes: f.boxes.iter().map(|b| b.bbox).collect(),
        }
    }
}

/// Generates frames `0..n` of `cfg` directly as samples.
pub fn simulate_samples(cfg: &SimConfig, n: usize) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let rig = cfg.rig_file().to_rig()?;
    (0..n as u64).map(|i| Ok(Sample::from_frame(&generate_frame(cfg, &rig, i)?))).collect()
}

pub fn annotations_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("annotations_{}.json", split.name()))
}

/// Reads `dir/annotations_{split}.json` and the images it lists, sorted by
/// image id. A missing radar PNG is re-rendered from the raw radar JSON with
/// the dataset's rig.
pub fn load_dataset(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let path = annotations_path(dir, split);
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let ann = AnnotationSet::from_json(&text)?;
    let split_dir = dir.join(split.name());

    let mut listed = HashSet::new();
    for img in &ann.images {
        listed.insert(Path::new(&img.file_name).file_name().map(|s| s.to_os_string()));
    }
    let vision_dir = split_dir.join("vision");
    if vision_dir.is_dir() {
        let entries = std::fs::read_dir(&vision_dir).map_err(|e| CoreError::io(&vision_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CoreError::io(&vision_dir, e))?;
            if !listed.contains(&Some(entry.file_name())) {
                return Err(CoreError::Dataset {
                    frame: entry.file_name().to_string_lossy().into_owned(),
                    message: format!("image has no record in {}", path.display()),
                });
            }
        }
    }

    let mut rig_cache = None;
    let mut images = ann.images.clone();
    images.sort_by_key(|i| i.id);
    let mut out = Vec::with_capacity(images.len());
    for img in &images {
        let frame_path = split_dir.join(&img.file_name);
        let stem = Path::new(&img.file_name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let missing = |what: &str| CoreError::Dataset { frame: stem.clone(), message: format!("missing {what}") };
        if !frame_path.is_file() {
            return Err(missing(&format!("vision image {}", frame_path.display())));
        }
        let vision = RgbImage::read_png(&frame_path)?;
        if (vision.width, vision.height) != (img.width, img.height) {
            return Err(CoreError::Dataset {
                frame: stem.clone(),
                message: format!(
                    "image is {}x{}, annotation says {}x{}",
                    vision.width, vision.height, img.width, img.height
                ),
            });
        }
        let radar_png = split_dir.join("radar_png").join(format!("{stem}.png"));
        let radar_raw = split_dir.join("radar_raw").join(format!("{stem}.json"));
        let radar = if radar_png.is_file() {
            RgbImage::read_png(&radar_png)?
        } else if radar_raw.is_file() {
            if rig_cache.is_none() {
                let rig: RigFile = read_json(dir.join("rig.json"))?;
                let splat = read_json::<SimConfig>(dir.join("sim_config.json"))
                    .map(|c| c.splat_radius)
                    .unwrap_or(DEFAULT_SPLAT_RADIUS);
                rig_cache = Some((rig.to_rig()?, splat));
            }
            let (rig, splat) = rig_cache.as_ref().expect("just filled");
            let text = std::fs::read_to_string(&radar_raw).map_err(|e| CoreError::io(&radar_raw, e))?;
            let frame = parse_radar_frame(&text)
                .map_err(|e| CoreError::Dataset { frame: stem.clone(), message: e.to_string() })?;
            render_radar_frame(&frame, rig, img.width, img.height, *splat).0
        } else {
            return Err(missing("radar image and raw radar frame"));
        };
        if (radar.width, radar.height) != (vision.width, vision.height) {
            return Err(CoreError::Dataset { frame: stem, message: "radar and vision sizes differ".into() });
        }
        out.push(Sample { image_id: img.id, stem, vision, radar, boxes: ann.boxes_for(img.id) });
    }
    Ok(out)
}
