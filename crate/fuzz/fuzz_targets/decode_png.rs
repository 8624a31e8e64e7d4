#![no_main]

use libfuzzer_sys::fuzz_target;
use photoseq_core::io::decode_png;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png(data) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
