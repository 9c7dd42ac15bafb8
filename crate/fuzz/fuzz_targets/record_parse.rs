#![no_main]

use libfuzzer_sys::fuzz_target;
use mosaic_core::record::Record;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = Record::parse(text) {
        let again = Record::parse(&r.to_string()).expect("rendered record must parse");
        assert_eq!(again, r);
    }
});
