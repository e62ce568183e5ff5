#![no_main]

use blocktri::schur::band::BandMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = BandMatrix::decode(data) {
        let again = BandMatrix::decode(&b.encode()).expect("re-encoded band decodes");
        assert_eq!(again.data(), b.data());
    }
});
