#![no_main]

use libfuzzer_sys::fuzz_target;
use photoseq_core::NoiseParams;

fuzz_target!(|data: &str| {
    if let Ok(p) = NoiseParams::parse(data) {
        assert!(p.alpha >= 0.0 && p.beta >= 0.0);
        assert_eq!(NoiseParams::parse(&p.to_text()).unwrap(), p);
    }
});
