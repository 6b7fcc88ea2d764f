#![no_main]

use libfuzzer_sys::fuzz_target;
use rvf_core::formats::annotations::AnnotationSet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = AnnotationSet::from_json(text) {
        for img in &set.images {
            for b in set.boxes_for(img.id) {
                assert!(b[2] >= b[0] && b[3] >= b[1]);
            }
        }
    }
});
