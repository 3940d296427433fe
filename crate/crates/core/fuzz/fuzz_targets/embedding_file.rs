#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::embedding::{decode_embeddings, write_embeddings};

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = decode_embeddings(data) {
        let mut out = Vec::new();
        write_embeddings(&mut out, file.dim, &file.vectors).unwrap();
        assert_eq!(out, data);
    }
});
