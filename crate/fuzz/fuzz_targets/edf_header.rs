#![no_main]
use libfuzzer_sys::fuzz_target;
use somno::edf::parse_header;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, signals)) = parse_header(data) {
        assert_eq!(header.signal_count, signals.len());
        assert_eq!(header.header_bytes, 256 * (signals.len() + 1));
    }
});
