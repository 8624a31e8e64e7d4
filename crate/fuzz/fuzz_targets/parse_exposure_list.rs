#![no_main]

use libfuzzer_sys::fuzz_target;
use photoseq_core::sequencer::parse_exposure_list;

fuzz_target!(|data: &str| {
    if let Ok(entries) = parse_exposure_list(data) {
        assert!(entries.iter().all(|(_, f)| !f.contains("..")));
    }
});
