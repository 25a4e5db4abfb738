#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::EmbeddingSet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = EmbeddingSet::parse(text) {
        let out = set.to_text();
        let again = EmbeddingSet::parse(&out).expect("own output parses");
        assert_eq!(again.to_text(), out);
    }
});
