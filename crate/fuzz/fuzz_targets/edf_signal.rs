#![no_main]
use libfuzzer_sys::fuzz_target;
use somno::edf::EdfFile;

fuzz_target!(|data: &[u8]| {
    let Ok(file) = EdfFile::parse(data.to_vec()) else {
        return;
    };
    let labels: Vec<String> = file.signals.iter().map(|s| s.label.clone()).collect();
    for label in labels {
        if let Ok(rec) = file.read_signal(&label) {
            let digital = file.read_digital(&label).expect("physical read succeeded");
            assert_eq!(rec.samples.len(), digital.len());
        }
    }
});
