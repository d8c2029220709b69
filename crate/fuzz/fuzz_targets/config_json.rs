#![no_main]

use libfuzzer_sys::fuzz_target;
use singkal::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(text) {
            // anything accepted must survive a round trip
            let again = serde_json::to_string(&cfg).expect("serializable");
            assert_eq!(RunConfig::from_json(&again).expect("reparses"), cfg);
        }
    }
});
