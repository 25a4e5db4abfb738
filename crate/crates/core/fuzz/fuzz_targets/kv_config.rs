#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::config::KvConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(kv) = KvConfig::parse(text) {
        let out = kv.to_text();
        let again = KvConfig::parse(&out).expect("own output parses");
        assert_eq!(again.to_text(), out);
    }
});
