#![no_main]

use libfuzzer_sys::fuzz_target;
use photoseq_core::ToolkitConfig;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = ToolkitConfig::parse(data) {
        let again = ToolkitConfig::parse(&cfg.to_toml()).expect("valid config re-parses");
        assert_eq!(cfg, again);
    }
});
