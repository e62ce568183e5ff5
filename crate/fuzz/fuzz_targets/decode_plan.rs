#![no_main]

use blocktri::io::{decode_plan, encode_plan};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(plan) = decode_plan(data) {
        let again = decode_plan(&encode_plan(&plan)).expect("re-encoded plan decodes");
        assert_eq!(encode_plan(&again), encode_plan(&plan));
    }
});
