#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::corpus::CorpusSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = CorpusSpec::from_config_text(text) {
        let out = spec.to_config_text();
        let again = CorpusSpec::from_config_text(&out).expect("own output parses");
        assert_eq!(again.to_config_text(), out);
    }
});
