#![no_main]

use libfuzzer_sys::fuzz_target;
use rvf_core::formats::rig::RigFile;
use rvf_core::geometry::{project_radar_to_pixel, RadarDetection};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rig) = RigFile::from_json(text).and_then(|r| r.to_rig()) {
        let det = RadarDetection::new(10.0, 0.1, 0.0, 0.0).unwrap();
        let _ = project_radar_to_pixel(&det, &rig);
    }
});
