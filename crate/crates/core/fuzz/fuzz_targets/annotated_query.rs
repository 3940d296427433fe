#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::training::read_annotated_queries;

fuzz_target!(|data: &[u8]| {
    let _ = read_annotated_queries(data);
});
