#![no_main]

use libfuzzer_sys::fuzz_target;
use photoseq_core::cache::Manifest;

fuzz_target!(|data: &str| {
    if let Ok(m) = Manifest::parse(data) {
        assert!(m.samples.iter().all(|s| !s.dir.contains('/') && s.n1 > 0 && s.n2 > 0));
    }
});
