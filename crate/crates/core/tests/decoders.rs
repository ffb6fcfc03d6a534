//! Every decoder against the checked-in fuzz corpus and random mutations of it.
//! The properties are the ones the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;

use somno::edf::{decode_tal_block, parse_header, EdfFile};
use somno::net::{decode_ssw, encode_ssw, Model};
use somno::pipeline::{decode_epd, encode_epd};
use somno::stream::{decode_frame, encode_frame, read_frame};

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "empty corpus {}", dir.display());
    paths.iter().map(|p| fs::read(p).unwrap()).collect()
}

fn edf_header(data: &[u8]) {
    if let Ok((header, signals)) = parse_header(data) {
        assert_eq!(header.signal_count, signals.len());
        assert_eq!(header.header_bytes, 256 * (signals.len() + 1));
    }
}

fn edf_signal(data: &[u8]) {
    let Ok(file) = EdfFile::parse(data.to_vec()) else {
        return;
    };
    for s in file.signals.clone() {
        if let Ok(rec) = file.read_signal(&s.label) {
            let digital = file.read_digital(&s.label).expect("physical read succeeded");
            assert_eq!(rec.samples.len(), digital.len());
            assert!(rec.samples.iter().all(|v| v.is_finite()));
        }
    }
}

fn edf_annotations(data: &[u8]) {
    if let Ok(anns) = decode_tal_block(data) {
        assert!(anns.iter().all(|a| a.onset_s.is_finite()));
    }
    if let Ok(file) = EdfFile::parse(data.to_vec()) {
        let _ = file.parse_annotations();
    }
}

fn frame_decode(data: &[u8]) {
    let mut rest = data;
    while let Ok((frame, used)) = decode_frame(rest) {
        assert_eq!(encode_frame(&frame).expect("decoded frames re-encode"), &rest[..used]);
        rest = &rest[used..];
    }
    let mut r = data;
    while let Ok(Some(_)) = read_frame(&mut r) {}
}

fn ssw_load(data: &[u8]) {
    if let Ok(w) = decode_ssw(data) {
        assert_eq!(decode_ssw(&encode_ssw(&w)).unwrap(), w);
        Model::<f32>::from_weights(&w).expect("checked weights build a model");
    }
}

fn epd_load(data: &[u8]) {
    if let Ok(epochs) = decode_epd(data) {
        assert_eq!(encode_epd(&epochs), data);
    }
}

type Target = (&'static str, fn(&[u8]));

const TARGETS: [Target; 6] = [
    ("edf_header", edf_header),
    ("edf_signal", edf_signal),
    ("edf_annotations", edf_annotations),
    ("frame_decode", frame_decode),
    ("ssw_load", ssw_load),
    ("epd_load", epd_load),
];

#[test]
fn corpus_seeds_decode() {
    for (target, check) in TARGETS {
        for seed in corpus(target) {
            check(&seed);
        }
    }
    // the seeds are meant to be valid inputs, not just non-crashing ones
    for seed in corpus("edf_signal") {
        EdfFile::parse(seed).unwrap();
    }
    for seed in corpus("ssw_load") {
        decode_ssw(&seed).unwrap();
    }
    for seed in corpus("epd_load") {
        decode_epd(&seed).unwrap();
    }
    let session = corpus("frame_decode").concat();
    let mut r = &session[..];
    while read_frame(&mut r).unwrap().is_some() {}
}

#[derive(Debug, Clone)]
struct Mutation {
    seed: usize,
    writes: Vec<(usize, u8)>,
    truncate: Option<usize>,
}

fn mutation() -> impl Strategy<Value = Mutation> {
    (
        any::<usize>(),
        prop::collection::vec((any::<usize>(), any::<u8>()), 0..8),
        prop::option::of(any::<usize>()),
    )
        .prop_map(|(seed, writes, truncate)| Mutation { seed, writes, truncate })
}

fn apply(seeds: &[Vec<u8>], m: &Mutation) -> Vec<u8> {
    let mut data = seeds[m.seed % seeds.len()].clone();
    if data.is_empty() {
        return data;
    }
    for &(pos, byte) in &m.writes {
        let n = data.len();
        // bias towards headers, where the length fields live
        let i = if pos % 2 == 0 { pos % n.min(768) } else { pos % n };
        data[i] = byte;
    }
    if let Some(t) = m.truncate {
        data.truncate(t % (data.len() + 1));
    }
    data
}

macro_rules! mutated {
    ($name:ident, $target:literal, $check:ident) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(96))]
            #[test]
            fn $name(m in mutation()) {
                let seeds = corpus($target);
                $check(&apply(&seeds, &m));
            }
        }
    };
}

mutated!(mutated_edf_header, "edf_header", edf_header);
mutated!(mutated_edf_signal, "edf_signal", edf_signal);
mutated!(mutated_edf_annotations, "edf_annotations", edf_annotations);
mutated!(mutated_frames, "frame_decode", frame_decode);
mutated!(mutated_ssw, "ssw_load", ssw_load);
mutated!(mutated_epd, "epd_load", epd_load);

proptest! {
    #[test]
    fn arbitrary_bytes(data in prop::collection::vec(any::<u8>(), 0..600)) {
        for (_, check) in TARGETS {
            check(&data);
        }
    }
}
