#![no_main]

use blocktri::io::{decode_blocktri, encode_blocktri};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = decode_blocktri(data) {
        // accepted input re-encodes to something that decodes to the same matrix
        let again = decode_blocktri(&encode_blocktri(&p)).expect("re-encoded matrix decodes");
        assert_eq!(again, p);
    }
});
