#![no_main]

use libfuzzer_sys::fuzz_target;
use rvf_core::evaluation::{compute_metrics, Detection};
use rvf_core::formats::annotations::{parse_detections, xywh_to_xyxy};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_detections(text) {
        let dets: Vec<Detection> = records
            .iter()
            .take(64)
            .map(|r| Detection { image_id: r.image_id, category_id: r.category_id, bbox: xywh_to_xyxy(r.bbox), score: r.score })
            .collect();
        let report = compute_metrics(&dets, &[], 100);
        assert!(report.values().iter().all(|v| *v == -1.0));
    }
});
