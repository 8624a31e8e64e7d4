#![no_main]

use libfuzzer_sys::fuzz_target;
use photoseq_core::{container, Decomposer};

fuzz_target!(|data: &[u8]| {
    if let Ok((meta, tensors)) = container::decode(data) {
        let _ = Decomposer::from_parts(&meta, tensors);
    }
});
