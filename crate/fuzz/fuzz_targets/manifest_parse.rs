#![no_main]

use libfuzzer_sys::fuzz_target;
use mosaic_cli::manifest::RunManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = RunManifest::parse(text) {
        let _ = RunManifest::parse(&m.to_string()).expect("rendered manifest must parse");
    }
});
