#![no_main]

use libfuzzer_sys::fuzz_target;
use photoseq_core::training::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let _ = Checkpoint::decode(data);
});
