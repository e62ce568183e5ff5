#![no_main]

use blocktri::io::{decode_blockvec, encode_blockvec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = decode_blockvec(data) {
        assert_eq!(encode_blockvec(&v), data);
    }
});
