#![no_main]

use libfuzzer_sys::fuzz_target;
use mosaic_cli::config::ExperimentConfig;

// The first line is read as a `--set` override, the rest as the file.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (set, body) = text.split_once('\n').unwrap_or((text, ""));
    if let Ok(cfg) = ExperimentConfig::load(Some(body), &[set.to_string()]) {
        let rec = cfg.to_record();
        let again = ExperimentConfig::from_record(&rec).expect("rendered config must load");
        assert_eq!(again.to_record(), rec);
    }
});
