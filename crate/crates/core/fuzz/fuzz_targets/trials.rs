#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::data::{parse_trials, trials_to_text};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = parse_trials(text) {
        let out = trials_to_text(&pairs);
        assert_eq!(parse_trials(&out).expect("own output parses"), pairs);
    }
});
