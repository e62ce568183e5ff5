//! Replays the checked-in fuzz corpora through the decoders.

use std::path::Path;

use blocktri::io::{decode_blocktri, decode_blockvec, decode_plan, encode_blocktri, encode_blockvec, encode_plan};
use blocktri::schur::band::BandMatrix;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn blocktri_seeds() {
    for (name, bytes) in seeds("decode_blocktri") {
        match decode_blocktri(&bytes) {
            Ok(p) => assert_eq!(encode_blocktri(&p), bytes, "{name}"),
            Err(_) => assert_eq!(name, "truncated"),
        }
    }
}

#[test]
fn blockvec_seeds() {
    for (name, bytes) in seeds("decode_blockvec") {
        assert_eq!(encode_blockvec(&decode_blockvec(&bytes).unwrap()), bytes, "{name}");
    }
}

#[test]
fn plan_seeds() {
    for (name, bytes) in seeds("decode_plan") {
        assert_eq!(encode_plan(&decode_plan(&bytes).unwrap()), bytes, "{name}");
    }
}

#[test]
fn band_seeds() {
    for (name, bytes) in seeds("decode_band") {
        assert_eq!(BandMatrix::decode(&bytes).unwrap().encode(), bytes, "{name}");
    }
}
