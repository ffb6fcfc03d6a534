#![no_main]
use libfuzzer_sys::fuzz_target;
use somno::net::{decode_ssw, encode_ssw, Model};

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_ssw(data) {
        assert_eq!(decode_ssw(&encode_ssw(&w)).expect("re-encoded weights decode"), w);
        let _ = Model::<f32>::from_weights(&w).expect("checked weights build a model");
    }
});
