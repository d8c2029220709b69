#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Some((&dim, rest)) = data.split_first() {
        let _ = singkal::io::parse_measurements_csv(rest, usize::from(dim % 8));
    }
});
