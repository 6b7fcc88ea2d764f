#![no_main]

use libfuzzer_sys::fuzz_target;
use rvf_core::scene_sim::SimConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SimConfig::from_json(text) {
        let _ = cfg.rig_file().to_rig();
    }
});
