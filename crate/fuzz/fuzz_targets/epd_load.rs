#![no_main]
use libfuzzer_sys::fuzz_target;
use somno::pipeline::{decode_epd, encode_epd};

fuzz_target!(|data: &[u8]| {
    if let Ok(epochs) = decode_epd(data) {
        assert_eq!(encode_epd(&epochs), data);
    }
});
