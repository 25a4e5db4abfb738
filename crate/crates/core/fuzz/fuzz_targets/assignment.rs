#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::cluster::ClusterAssignment;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((ids, assignment)) = ClusterAssignment::parse(text) {
        let out = assignment.to_text(&ids).expect("parsed ids match labels");
        let (ids2, again) = ClusterAssignment::parse(&out).expect("own output parses");
        assert_eq!(again.to_text(&ids2).unwrap(), out);
    }
});
