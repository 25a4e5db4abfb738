#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::data::{PreparedDataset, Role};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for role in [Role::Train, Role::DevTest] {
        if let Ok(ds) = PreparedDataset::from_manifest(text, role) {
            let out = ds.to_manifest();
            let again = PreparedDataset::from_manifest(&out, role).expect("own output parses");
            assert_eq!(again.to_manifest(), out);
        }
    }
});
