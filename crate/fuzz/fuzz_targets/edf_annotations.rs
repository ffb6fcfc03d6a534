#![no_main]
use libfuzzer_sys::fuzz_target;
use somno::edf::{decode_tal_block, EdfFile};

fuzz_target!(|data: &[u8]| {
    // raw TAL blocks and whole EDF+ files
    if let Ok(anns) = decode_tal_block(data) {
        for a in anns {
            assert!(a.onset_s.is_finite());
        }
    }
    if let Ok(file) = EdfFile::parse(data.to_vec()) {
        let _ = file.parse_annotations();
    }
});
