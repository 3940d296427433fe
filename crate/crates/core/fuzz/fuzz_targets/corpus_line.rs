#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::pipeline::{parse_corpus_line, LocalLexicalBackend, TextBackend};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(passage) = parse_corpus_line(text, 1, 0) {
        let query = passage.text.clone();
        if let Ok(backend) = LocalLexicalBackend::new([passage]) {
            let hits = backend.search(&query, 3).unwrap();
            assert!(hits.len() <= 1);
        }
    }
});
