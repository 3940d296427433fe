#![no_main]

use libfuzzer_sys::fuzz_target;
use mmrag_core::store::parse_record_line;
use mmrag_core::EntityStore;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = parse_record_line(text, 1) {
        let store = EntityStore::from_records([record.clone()]).unwrap();
        let mut out = Vec::new();
        store.write_to(&mut out).unwrap();
        let back = EntityStore::read_from(&out[..]).unwrap();
        assert_eq!(back.get(record.id).unwrap(), &record);
    }
    let _ = EntityStore::read_from(data);
});
