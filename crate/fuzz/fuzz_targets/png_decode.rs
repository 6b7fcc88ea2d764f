#![no_main]

use libfuzzer_sys::fuzz_target;
use rvf_core::image::RgbImage;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = RgbImage::from_png_bytes(data) {
        assert_eq!(img.data.len(), img.width as usize * img.height as usize * 3);
    }
});
