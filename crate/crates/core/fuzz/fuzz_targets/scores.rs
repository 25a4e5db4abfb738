#![no_main]

use libfuzzer_sys::fuzz_target;
use spkadapt::eval::{compute_eer, parse_scores, scores_to_text, Backend};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for backend in [Backend::Cosine, Backend::Siamese] {
        if let Ok(scored) = parse_scores(text, backend) {
            let out = scores_to_text(&scored);
            let again = parse_scores(&out, backend).expect("own output parses");
            assert_eq!(scores_to_text(&again), out);
            if let Ok(r) = compute_eer(&scored) {
                assert!((0.0..=1.0).contains(&r.eer));
            }
        }
    }
});
