#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::training::{parse_instance, serialize_instance};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(instance) = parse_instance(text) {
        instance.validate().unwrap();
        let _ = instance.interleaved_text();
        assert_eq!(
            parse_instance(&serialize_instance(&instance)).unwrap(),
            instance
        );
    }
});
