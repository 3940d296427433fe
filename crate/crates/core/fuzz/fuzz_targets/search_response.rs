#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::pipeline::parse_search_response;

fuzz_target!(|data: &[u8]| {
    if let Ok(passages) = parse_search_response(data, 5) {
        assert!(passages.len() <= 5);
        assert!(passages
            .iter()
            .all(|p| !p.text.trim().is_empty() && p.score.is_finite()));
    }
});
