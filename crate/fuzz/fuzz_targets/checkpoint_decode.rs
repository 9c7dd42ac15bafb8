#![no_main]

use libfuzzer_sys::fuzz_target;
use mosaic_core::networks::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = decode(data) {
        assert_eq!(encode(&c.meta, &c.params), data);
    }
});
