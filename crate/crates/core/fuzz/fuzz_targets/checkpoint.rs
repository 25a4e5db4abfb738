#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ckpt) = Checkpoint::parse(text) {
        let out = ckpt.to_text();
        let again = Checkpoint::parse(&out).expect("own output parses");
        assert_eq!(again.to_text(), out);
    }
});
