#![no_main]

use libfuzzer_sys::fuzz_target;
use singkal::config::PenaltySpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = PenaltySpec::parse(text) {
            let n = p.declared_dim().unwrap_or(3);
            let z = vec![0.5; n];
            if let Ok(x) = p.prox(1.0, &z) {
                assert!(x.iter().all(|v| v.is_finite()));
            }
        }
    }
});
