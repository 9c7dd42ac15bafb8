#![no_main]

use libfuzzer_sys::fuzz_target;
use mosaic_core::datasets::{decode_dump, encode_dump};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = decode_dump(text) {
        assert_eq!(decode_dump(&encode_dump(&d)).expect("encoded dump must decode"), d);
    }
});
