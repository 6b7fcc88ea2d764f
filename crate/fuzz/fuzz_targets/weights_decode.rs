#![no_main]

use libfuzzer_sys::fuzz_target;
use rvf_core::formats::weights::{decode, encode};
use rvf_core::model::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(encode(&tensors).unwrap(), data);
        let _ = Model::from_weights_bytes(data);
    }
});
