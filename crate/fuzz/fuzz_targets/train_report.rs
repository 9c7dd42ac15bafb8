#![no_main]

use libfuzzer_sys::fuzz_target;
use mosaic_core::record::Record;
use mosaic_core::training::TrainReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(r) = Record::parse(text) else { return };
    if let Ok(rep) = TrainReport::from_record(&r, "report") {
        let back = TrainReport::from_record(&rep.to_record(), "report").expect("rendered report must parse");
        assert_eq!(back.losses.len(), rep.losses.len());
    }
});
