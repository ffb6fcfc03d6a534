#![no_main]
use libfuzzer_sys::fuzz_target;
use somno::stream::{decode_frame, encode_frame, read_frame};

fuzz_target!(|data: &[u8]| {
    let mut rest = data;
    while let Ok((frame, used)) = decode_frame(rest) {
        let bytes = encode_frame(&frame).expect("decoded frames re-encode");
        assert_eq!(bytes, &rest[..used]);
        rest = &rest[used..];
    }
    let mut r = data;
    while let Ok(Some(_)) = read_frame(&mut r) {}
});
