#![no_main]

use libfuzzer_sys::fuzz_target;
use rvf_core::formats::radar_json::parse_radar_frame;
use rvf_core::geometry::{CameraIntrinsics, SensorRig};
use rvf_core::radar_imaging::{disc_area, render_radar_frame};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(frame) = parse_radar_frame(text) {
        let k = CameraIntrinsics::centered(64, 48, 60.0);
        let rig = SensorRig::from_poses([0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3], k).unwrap();
        let (img, stats) = render_radar_frame(&frame, &rig, 64, 48, 2);
        assert_eq!(stats.painted + stats.dropped, frame.detections.len());
        assert!(img.count_nonzero() <= stats.painted * disc_area(2));
    }
});
