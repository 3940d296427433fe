#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::index::{decode_index, encode_index};

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = decode_index(data) {
        index.check_invariants().unwrap();
        let bytes = encode_index(&index).unwrap();
        let again = decode_index(&bytes).unwrap();
        assert_eq!(encode_index(&again).unwrap(), bytes);
    }
});
