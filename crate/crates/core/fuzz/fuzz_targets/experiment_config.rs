#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::cli::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::resolve(text, &[]) {
        let again = ExperimentConfig::resolve(&cfg.to_text(), &[]).expect("own output parses");
        assert_eq!(again, cfg);
    }
});
