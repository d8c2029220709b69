#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = singkal::io::parse_dc_motor_csv(data);
});
